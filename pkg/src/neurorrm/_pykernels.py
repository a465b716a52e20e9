"""Pure-numpy implementations of the hot loops.

Each function mirrors one in ``_kernels.pyx`` and performs the same floating
point operations in the same order, so both backends agree bit for bit on
the exhaustive search and the TEM encoder.
"""
import numpy as np

# Scores this close to the minimum (relative) count as ties. Saturated
# demands make many configurations exactly equivalent, and without a
# tolerance the summation order alone would pick the winner.
TIE_RTOL = 1e-9


def objective_scores(capacity, total_power, total_bandwidth, demand,
                     beta0, beta1, beta2):
    scores = np.zeros(capacity.shape[0])
    for b in range(capacity.shape[1]):
        scores = scores + beta0 * np.abs(capacity[:, b] - demand[b])
    scores = scores + beta1 * total_power
    scores = scores + beta2 * total_bandwidth
    return scores


def best_config(capacity, total_power, total_bandwidth, demand,
                beta0, beta1, beta2):
    """Index and score of the minimum-objective row.

    Near-ties (within ``TIE_RTOL``): lower total power, then lower total
    bandwidth, then lower index.
    """
    scores = objective_scores(capacity, total_power, total_bandwidth, demand,
                              beta0, beta1, beta2)
    lo = scores.min()
    cand = np.flatnonzero(scores <= lo + TIE_RTOL * max(abs(lo), 1.0))
    if cand.size > 1:
        p = total_power[cand]
        cand = cand[p == p.min()]
        if cand.size > 1:
            w = total_bandwidth[cand]
            cand = cand[w == w.min()]
    k = int(cand[0])
    return k, float(scores[k])


def best_configs(capacity, total_power, total_bandwidth, demands,
                 beta0, beta1, beta2):
    demands = np.atleast_2d(demands)
    out_k = np.empty(demands.shape[0], dtype=np.int64)
    out_s = np.empty(demands.shape[0])
    for i in range(demands.shape[0]):
        out_k[i], out_s[i] = best_config(capacity, total_power, total_bandwidth,
                                         demands[i], beta0, beta1, beta2)
    return out_k, out_s


def tem_encode_batch(x, T, alpha_u, alpha_v, threshold):
    """(S, N) inputs -> (S, N*R, T) uint8 spikes, rows ordered input-major."""
    x = np.asarray(x, dtype=np.float64)
    S, N = x.shape
    R = len(alpha_u)
    out = np.zeros((S, N, R, T), dtype=np.uint8)
    for r in range(R):
        du = 1.0 - alpha_u[r]
        dv = 1.0 - alpha_v[r]
        u = np.zeros((S, N))
        v = np.zeros((S, N))
        for t in range(T):
            u = du * u + x
            v = dv * v + u
            s = v >= threshold
            out[:, :, r, t] = s
            v = np.where(s, 0.0, v)
    return out.reshape(S, N * R, T)


def lif_layer(weights_t, spikes_in, lam_syn, lam_mem, threshold):
    """Run one layer over a whole spike train.

    ``weights_t`` is (N_in, N_out), ``spikes_in`` is (N_in, T) binary.
    Returns (N_out, T) uint8.
    """
    n_in, n_out = weights_t.shape
    T = spikes_in.shape[1]
    out = np.zeros((n_out, T), dtype=np.uint8)
    i_syn = np.zeros(n_out)
    u = np.zeros(n_out)
    s_prev = np.zeros(n_out)
    for t in range(T):
        active = np.flatnonzero(spikes_in[:, t])
        drive = np.zeros(n_out)
        for j in active:
            drive = drive + weights_t[j]
        i_syn = lam_syn * i_syn + drive
        u = lam_mem * u * (1.0 - s_prev) + i_syn
        s = (u >= threshold).astype(np.float64)
        out[:, t] = s
        s_prev = s
    return out
