# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see _pykernels.py for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef double TIE_RTOL = 1e-9


cdef Py_ssize_t _best(const double[:, ::1] cap, const double[::1] ptot,
                      const double[::1] wtot, const double[::1] dem,
                      double beta0, double beta1, double beta2,
                      double[::1] scores, double* best_score) noexcept nogil:
    cdef Py_ssize_t F = cap.shape[0], B = cap.shape[1], k, b, best = -1
    cdef double s, lo = 0.0, tol
    for k in range(F):
        s = 0.0
        for b in range(B):
            s = s + beta0 * fabs(cap[k, b] - dem[b])
        s = s + beta1 * ptot[k]
        s = s + beta2 * wtot[k]
        scores[k] = s
        if k == 0 or s < lo:
            lo = s
    tol = TIE_RTOL * (fabs(lo) if fabs(lo) > 1.0 else 1.0)
    for k in range(F):
        if scores[k] > lo + tol:
            continue
        if best < 0 or ptot[k] < ptot[best] or (ptot[k] == ptot[best] and wtot[k] < wtot[best]):
            best = k
    best_score[0] = scores[best]
    return best


def best_config(capacity, total_power, total_bandwidth, demand,
                double beta0, double beta1, double beta2):
    cdef const double[:, ::1] cap = np.ascontiguousarray(capacity, dtype=np.float64)
    cdef const double[::1] p = np.ascontiguousarray(total_power, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(total_bandwidth, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(demand, dtype=np.float64)
    cdef double score
    cdef Py_ssize_t k
    if cap.shape[0] == 0:
        raise ValueError("empty configuration space")
    cdef double[::1] buf = np.empty(cap.shape[0])
    with nogil:
        k = _best(cap, p, w, d, beta0, beta1, beta2, buf, &score)
    return int(k), float(score)


def best_configs(capacity, total_power, total_bandwidth, demands,
                 double beta0, double beta1, double beta2):
    cdef const double[:, ::1] cap = np.ascontiguousarray(capacity, dtype=np.float64)
    cdef const double[::1] p = np.ascontiguousarray(total_power, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(total_bandwidth, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(np.atleast_2d(demands), dtype=np.float64)
    cdef Py_ssize_t S = d.shape[0], i
    out_k = np.empty(S, dtype=np.int64)
    out_s = np.empty(S, dtype=np.float64)
    cdef cnp.int64_t[::1] ok = out_k
    cdef double[::1] os = out_s
    cdef double score
    if cap.shape[0] == 0:
        raise ValueError("empty configuration space")
    cdef double[::1] buf = np.empty(cap.shape[0])
    with nogil:
        for i in range(S):
            ok[i] = _best(cap, p, w, d[i], beta0, beta1, beta2, buf, &score)
            os[i] = score
    return out_k, out_s


def tem_encode_batch(x, int T, alpha_u, alpha_v, double threshold):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] au = np.ascontiguousarray(alpha_u, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(alpha_v, dtype=np.float64)
    cdef Py_ssize_t S = xv.shape[0], N = xv.shape[1], R = au.shape[0]
    out = np.zeros((S, N * R, T), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    cdef Py_ssize_t s, n, r, t
    cdef double u, v, du, dv, xi
    with nogil:
        for s in range(S):
            for n in range(N):
                xi = xv[s, n]
                for r in range(R):
                    du = 1.0 - au[r]
                    dv = 1.0 - av[r]
                    u = 0.0
                    v = 0.0
                    for t in range(T):
                        u = du * u + xi
                        v = dv * v + u
                        if v >= threshold:
                            o[s, n * R + r, t] = 1
                            v = 0.0
    return out


def lif_layer(weights_t, spikes_in, double lam_syn, double lam_mem, double threshold):
    cdef const double[:, ::1] wt = np.ascontiguousarray(weights_t, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] sin = np.ascontiguousarray(spikes_in, dtype=np.uint8)
    cdef Py_ssize_t n_in = wt.shape[0], n_out = wt.shape[1], T = sin.shape[1]
    out = np.zeros((n_out, T), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    cdef double[::1] i_syn = np.zeros(n_out)
    cdef double[::1] u = np.zeros(n_out)
    cdef double[::1] drive = np.zeros(n_out)
    cdef double[::1] s_prev = np.zeros(n_out)
    cdef Py_ssize_t t, j, k
    cdef double s
    with nogil:
        for t in range(T):
            for k in range(n_out):
                drive[k] = 0.0
            for j in range(n_in):
                if sin[j, t]:
                    for k in range(n_out):
                        drive[k] = drive[k] + wt[j, k]
            for k in range(n_out):
                i_syn[k] = lam_syn * i_syn[k] + drive[k]
                u[k] = lam_mem * u[k] * (1.0 - s_prev[k]) + i_syn[k]
                s = 1.0 if u[k] >= threshold else 0.0
                o[k, t] = <cnp.uint8_t>s
                s_prev[k] = s
    return out
