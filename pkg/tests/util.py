"""Independent oracles shared by the test suite.

Everything here is deliberately written straight-line with plain numpy /
math so it shares no code path with the package implementation it checks.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference(fn, arrays, h: float = 1e-5):
    """Central-difference gradients of scalar ``fn(arrays)`` w.r.t. each array.

    ``fn`` must treat its inputs as read-only and return a float. Returns a
    list of gradient arrays matching the input shapes.
    """
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = g.reshape(-1)
        base = arr.reshape(-1)
        for i in range(base.size):
            orig = base[i]
            base[i] = orig + h
            up = fn(arrays)
            base[i] = orig - h
            down = fn(arrays)
            base[i] = orig
            flat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def assert_close_grads(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-7, label: str = ""):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    if not np.all(err <= bound):
        worst = np.unravel_index(int(np.argmax(err - bound)), err.shape)
        raise AssertionError(
            f"gradient mismatch {label} at {worst}: analytic={analytic[worst]!r} "
            f"numeric={numeric[worst]!r} err={err[worst]:.3e}")


def sigmoid_scalar(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def gru_step_scalar(x, h_prev, w_reset, u_reset, w_update, u_update, w_cand, u_cand):
    """Straight-line scalar GRU step; loops over every matrix entry by hand.

    The update gate and the candidate both see the reset-scaled previous
    state in their recurrent term.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    n_hidden = h_prev.shape[0]
    n_in = x.shape[0]

    def mat_vec(m, v, rows, cols):
        out = [0.0] * rows
        for i in range(rows):
            acc = 0.0
            for j in range(cols):
                acc += m[i][j] * v[j]
            out[i] = acc
        return out

    reset_in = mat_vec(w_reset, x, n_hidden, n_in)
    reset_rec = mat_vec(u_reset, h_prev, n_hidden, n_hidden)
    reset = [sigmoid_scalar(reset_in[i] + reset_rec[i]) for i in range(n_hidden)]

    gated_prev = [reset[i] * h_prev[i] for i in range(n_hidden)]

    update_in = mat_vec(w_update, x, n_hidden, n_in)
    update_rec = mat_vec(u_update, gated_prev, n_hidden, n_hidden)
    update = [sigmoid_scalar(update_in[i] + update_rec[i]) for i in range(n_hidden)]

    cand_in = mat_vec(w_cand, x, n_hidden, n_in)
    cand_rec = mat_vec(u_cand, gated_prev, n_hidden, n_hidden)
    cand = [math.tanh(cand_in[i] + cand_rec[i]) for i in range(n_hidden)]

    return np.array([(1.0 - update[i]) * h_prev[i] + update[i] * cand[i]
                     for i in range(n_hidden)])


def ff_decode_scalar(pooled, mean_ws, var_ws, weight_ws, variance_floor):
    """Straight-line feedforward mixture head: per-component projections."""
    pooled = np.asarray(pooled, dtype=np.float64)
    means = []
    variances = []
    logits = []
    for w_mu, w_var, w_a in zip(mean_ws, var_ws, weight_ws):
        pre_mu = [sum(w_mu[i][j] * pooled[j] for j in range(len(pooled)))
                  for i in range(len(w_mu))]
        means.append(np.array([math.tanh(v) for v in pre_mu]))
        pre_var = [sum(w_var[i][j] * pooled[j] for j in range(len(pooled)))
                   for i in range(len(w_var))]
        variances.append(np.array([math.log(math.exp(v) + 1.0) + variance_floor
                                   for v in pre_var]))
        logits.append(sum(w_a[0][j] * pooled[j] for j in range(len(pooled))))
    mx = max(logits)
    exps = [math.exp(v - mx) for v in logits]
    total = sum(exps)
    weights = np.array([e / total for e in exps])
    return weights, np.array(means), np.array(variances)


def naive_mixture_density(target, weights, means, variances) -> float:
    """Mixture density without the log-sum-exp trick; underflows for large d."""
    target = np.asarray(target, dtype=np.float64)
    total = 0.0
    for w, mu, var in zip(weights, means, variances):
        quad = 0.0
        norm = 1.0
        for d in range(target.shape[0]):
            quad += (target[d] - mu[d]) ** 2 / var[d]
            norm *= 2.0 * math.pi * var[d]
        total += w * math.exp(-0.5 * quad) / math.sqrt(norm)
    return math.log(total)


def mc_normalization(weights, means, variances, n: int, seed: int,
                     log_density_fn, widen: float = 2.0) -> float:
    """Monte Carlo integral of exp(log_density) over R^d.

    Importance sampling from the same mixture with variances widened by
    ``widen``; the proposal density is recomputed here from first
    principles, independent of the implementation under test.
    """
    rng = np.random.default_rng(seed)
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    n_comp, dim = means.shape
    comps = rng.choice(n_comp, size=n, p=weights)
    sigma = np.sqrt(widen * variances)
    samples = means[comps] + sigma[comps] * rng.standard_normal((n, dim))
    log_parts = np.empty((n, n_comp))
    for j in range(n_comp):
        var = widen * variances[j]
        diff = samples - means[j]
        log_parts[:, j] = (math.log(weights[j])
                           - 0.5 * ((diff * diff / var).sum(axis=1)
                                    + np.log(2.0 * math.pi * var).sum()))
    peak = log_parts.max(axis=1, keepdims=True)
    log_proposal = (peak + np.log(np.exp(log_parts - peak).sum(axis=1, keepdims=True))).ravel()
    return float(np.exp(log_density_fn(samples) - log_proposal).mean())


def cooccurrence_enumeration(sequences):
    """Nested-loop pair counts ((future item, history item) -> count)."""
    pair = {}
    for seq in sequences:
        for future_item in seq.future:
            for history_item in seq.history:
                key = (future_item, history_item)
                pair[key] = pair.get(key, 0) + 1
    seed_totals = {}
    for (fut, hist), c in pair.items():
        seed_totals[hist] = seed_totals.get(hist, 0) + c
    return pair, seed_totals


def item_cf_enumeration(history, pair, seed_totals, vocab_size):
    scores = np.zeros(vocab_size)
    for item in range(vocab_size):
        acc = 0.0
        for seed in history:
            total = seed_totals.get(seed, 0)
            if total > 0:
                acc += pair.get((item, seed), 0) / total
        scores[item] = acc / len(history)
    return scores


def precision_oracle(recommended, targets, k):
    hits = len(set(recommended[:k]) & set(targets))
    return hits / k


def recall_oracle(recommended, targets, k):
    hits = len(set(recommended[:k]) & set(targets))
    return hits / len(set(targets))


def ndcg_oracle(recommended, targets, k):
    targets = set(targets)
    dcg = 0.0
    for i, item in enumerate(recommended[:k], start=1):
        if item in targets:
            dcg += 1.0 / math.log2(i + 1)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, len(targets) + 1))
    return dcg / ideal
