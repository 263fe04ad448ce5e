import math

import numpy as np
import pytest

from mdnrec import autodiff as ad
from mdnrec.autodiff import ShapeError, Tape, Tensor

from util import assert_close_grads, finite_difference


def test_softmax_uniform_logits():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_softplus_at_zero():
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_tanh_odd():
    assert ad.tanh(Tensor(0.0)).item() == 0.0


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    (g,) = tape.backward(y, params=[x])
    assert g == pytest.approx(6.0)


def test_softmax_slice_gradient():
    x = Tensor([0.0, 0.0], requires_grad=True)
    with Tape() as tape:
        y = ad.softmax(x)[0]
    (g,) = tape.backward(y, params=[x])
    np.testing.assert_allclose(g, [0.25, -0.25], atol=1e-12)


def test_backward_rejects_non_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * x
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_gradient_for_unused_parameter_is_zero():
    x = Tensor(2.0, requires_grad=True)
    unused = Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape() as tape:
        y = x * x
    gx, gu = tape.backward(y, params=[x, unused])
    assert gx == pytest.approx(4.0)
    assert gu.shape == (2, 3)
    assert np.all(gu == 0.0)


def test_two_consumers_accumulate():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = x * x + x  # dy/dx = 2x + 1 = 5
    (g,) = tape.backward(y, params=[x])
    assert g == pytest.approx(5.0)


UNARY_OPS = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "softplus": ad.softplus,
    "neg": ad.neg,
    "softmax": lambda t: ad.softmax(t, axis=-1),
    "logsumexp": lambda t: ad.logsumexp(t, axis=-1),
    "sum_all": lambda t: t.sum(),
    "sum_axis": lambda t: t.sum(axis=-1),
    "mean_all": lambda t: t.mean(),
    "mean_axis": lambda t: t.mean(axis=-1, keepdims=True),
    "slice": lambda t: t[1:, :2],
}

BINARY_OPS = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "div": ad.div,
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    op = UNARY_OPS[name]
    for _ in range(3):
        x = rng.uniform(-2.0, 2.0, size=(3, 4))
        if name == "div":
            x += np.sign(x) * 0.5

        def run(arrays):
            t = Tensor(arrays[0], requires_grad=True)
            return float(op(t).sum().data)

        t = Tensor(x.copy(), requires_grad=True)
        with Tape() as tape:
            loss = op(t).sum()
        (analytic,) = tape.backward(loss, params=[t])
        (numeric,) = finite_difference(run, [x.copy()])
        assert_close_grads(analytic, numeric, label=name)


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    op = BINARY_OPS[name]
    for shapes in [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 1), (1, 4))]:
        a = rng.uniform(-2.0, 2.0, size=shapes[0])
        b = rng.uniform(0.5, 2.0, size=shapes[1])  # bounded away from 0 for div

        def run(arrays):
            ta = Tensor(arrays[0], requires_grad=True)
            tb = Tensor(arrays[1], requires_grad=True)
            return float(op(ta, tb).sum().data)

        ta = Tensor(a.copy(), requires_grad=True)
        tb = Tensor(b.copy(), requires_grad=True)
        with Tape() as tape:
            loss = op(ta, tb).sum()
        ga, gb = tape.backward(loss, params=[ta, tb])
        na, nb = finite_difference(run, [a.copy(), b.copy()])
        assert_close_grads(ga, na, label=f"{name}/lhs")
        assert_close_grads(gb, nb, label=f"{name}/rhs")


@pytest.mark.parametrize("shapes", [((2, 3), (3, 4)), ((2, 3), (3,)), ((3,), (3, 4)), ((3,), (3,))])
def test_matmul_gradients_match_finite_differences(shapes):
    rng = np.random.default_rng(7)
    a = rng.uniform(-2.0, 2.0, size=shapes[0])
    b = rng.uniform(-2.0, 2.0, size=shapes[1])

    def run(arrays):
        return float(ad.matmul(Tensor(arrays[0], requires_grad=True),
                               Tensor(arrays[1], requires_grad=True)).sum().data)

    ta = Tensor(a.copy(), requires_grad=True)
    tb = Tensor(b.copy(), requires_grad=True)
    with Tape() as tape:
        loss = ad.matmul(ta, tb).sum()
    ga, gb = tape.backward(loss, params=[ta, tb])
    na, nb = finite_difference(run, [a.copy(), b.copy()])
    assert_close_grads(ga, na, label="matmul/lhs")
    assert_close_grads(gb, nb, label="matmul/rhs")


@pytest.mark.parametrize("x_shape", [(5,), (4, 5)])
def test_linear_gradients_match_finite_differences(x_shape):
    rng = np.random.default_rng(11)
    x = rng.uniform(-2.0, 2.0, size=x_shape)
    w = rng.uniform(-2.0, 2.0, size=(3, 5))

    def run(arrays):
        return float(ad.linear(Tensor(arrays[0], requires_grad=True),
                               Tensor(arrays[1], requires_grad=True)).sum().data)

    tx = Tensor(x.copy(), requires_grad=True)
    tw = Tensor(w.copy(), requires_grad=True)
    with Tape() as tape:
        loss = ad.linear(tx, tw).sum()
    gx, gw = tape.backward(loss, params=[tx, tw])
    nx, nw = finite_difference(run, [x.copy(), w.copy()])
    assert_close_grads(gx, nx, label="linear/x")
    assert_close_grads(gw, nw, label="linear/w")


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(3)
    parts = [rng.uniform(-2.0, 2.0, size=(2, 3)) for _ in range(3)]

    def run_concat(arrays):
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        out = ad.concat(ts, axis=-1)
        return float((out * out).sum().data)

    ts = [Tensor(a.copy(), requires_grad=True) for a in parts]
    with Tape() as tape:
        out = ad.concat(ts, axis=-1)
        loss = (out * out).sum()
    analytic = tape.backward(loss, params=ts)
    numeric = finite_difference(run_concat, [a.copy() for a in parts])
    for g, n in zip(analytic, numeric):
        assert_close_grads(g, n, label="concat")

    def run_stack(arrays):
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        out = ad.stack(ts, axis=-1)
        return float((out * out).sum().data)

    ts = [Tensor(a.copy(), requires_grad=True) for a in parts]
    with Tape() as tape:
        out = ad.stack(ts, axis=-1)
        loss = (out * out).sum()
    analytic = tape.backward(loss, params=ts)
    numeric = finite_difference(run_stack, [a.copy() for a in parts])
    for g, n in zip(analytic, numeric):
        assert_close_grads(g, n, label="stack")


def test_softmax_simplex_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-20.0, 20.0, size=rng.integers(2, 9))
        s = ad.softmax(Tensor(x)).data
        assert abs(s.sum() - 1.0) <= 1e-9
        assert np.all(s > 0.0) and np.all(s < 1.0)


def test_softplus_strictly_positive():
    x = np.array([-700.0, -30.0, 0.0, 30.0, 700.0])
    out = ad.softplus(Tensor(x)).data
    assert np.all(out > 0.0)
    assert np.all(np.isfinite(out))


def test_shape_error_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as exc:
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    assert exc.value.primitive == "add"
    assert exc.value.shapes == ((2, 3), (4, 5))
    assert "add" in str(exc.value)
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.linear(Tensor(np.ones(4)), Tensor(np.ones((3, 5))))


def test_checked_mode_flags_non_finite():
    ad.set_checked(True)
    try:
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="log"):
            ad.log(Tensor([-1.0]))
    finally:
        ad.set_checked(False)
    # unchecked mode lets the NaN through silently
    with np.errstate(invalid="ignore"):
        out = ad.log(Tensor([-1.0]))
    assert np.isnan(out.data[0])


def test_no_tape_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.tanh(x)
    assert y.requires_grad
    tape = Tape()
    with tape:
        pass
    assert tape.nodes == []


def test_tape_nodes_are_in_topological_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
        z = (y * y).sum()
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert id(inp) not in (id(node.output),)
            # inputs must come from leaves or earlier nodes
            if inp.requires_grad and inp is not x:
                assert id(inp) in produced
        produced.add(id(node.output))
    assert id(z) in produced


def test_logsumexp_matches_naive_and_is_stable():
    x = np.array([1000.0, 1000.5, 999.0])
    out = ad.logsumexp(Tensor(x)).item()
    naive = 1000.5 + math.log(np.exp(x - 1000.5).sum())
    assert out == pytest.approx(naive, rel=1e-12)


def test_float32_flows_through():
    x = Tensor(np.ones(4, dtype=np.float32), requires_grad=True)
    out = ad.tanh(x).sum()
    assert out.dtype == np.float32
