# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Bellman sweeps and the switch simulation step.

Semantics mirror :mod:`qswitch._kernels._pure` exactly; the simulation loop
consumes uniforms from the caller's numpy Generator in the same order as
:func:`qswitch.simulator.step`, so both backends return bit-identical runs.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport fabs
from libc.stdint cimport int64_t
from numpy.random cimport bitgen_t

import numpy as np

cdef enum:
    MAXBUF = 64

# --------------------------------------------------------------------------
# dynamic programming


def policy_sweep(const double[::1] V, double[::1] out, const int64_t[::1] policy_rows,
                 double gamma, const double[::1] sa_reward, const int64_t[::1] tr_ptr,
                 const int64_t[::1] tr_next, const double[::1] tr_prob):
    cdef Py_ssize_t s, k, row, n = V.shape[0]
    cdef double acc, diff, worst = 0.0
    with nogil:
        for s in range(n):
            row = policy_rows[s]
            acc = 0.0
            for k in range(tr_ptr[row], tr_ptr[row + 1]):
                acc = acc + tr_prob[k] * V[tr_next[k]]
            out[s] = sa_reward[row] + gamma * acc
            diff = fabs(out[s] - V[s])
            if diff > worst:
                worst = diff
    return worst


def greedy_sweep(const double[::1] V, double[::1] out, int64_t[::1] choice, double gamma,
                 const int64_t[::1] sa_ptr, const double[::1] sa_reward,
                 const int64_t[::1] tr_ptr, const int64_t[::1] tr_next,
                 const double[::1] tr_prob, double tie_tol):
    cdef Py_ssize_t s, k, row, n = V.shape[0]
    cdef double acc, q, best, diff, worst = 0.0
    cdef double[::1] Q = np.empty(sa_reward.shape[0], dtype=np.float64)
    with nogil:
        for s in range(n):
            best = -1e300
            for row in range(sa_ptr[s], sa_ptr[s + 1]):
                acc = 0.0
                for k in range(tr_ptr[row], tr_ptr[row + 1]):
                    acc = acc + tr_prob[k] * V[tr_next[k]]
                q = sa_reward[row] + gamma * acc
                Q[row] = q
                if q > best:
                    best = q
            for row in range(sa_ptr[s], sa_ptr[s + 1]):
                if Q[row] >= best - tie_tol:
                    choice[s] = row
                    break
            out[s] = best
            diff = fabs(best - V[s])
            if diff > worst:
                worst = diff
    return worst


# --------------------------------------------------------------------------
# simulation

cdef struct Buf:
    int n
    double fid[MAXBUF]
    int lab[MAXBUF]
    # fidelity at creation and steps held since; fid = orig * fids[held]
    double orig[MAXBUF]
    int held[MAXBUF]


cdef struct Sim:
    Buf a
    Buf b
    int m_star
    int L
    int quantized
    double lam1
    double lam2
    double f_th
    double fids[MAXBUF]
    # combinatorial ranking tables, flattened (L+1) x (m_star+2)
    int64_t offsets[MAXBUF]
    int64_t nbuf


cdef inline double swap_fid(double f1, double f2) noexcept nogil:
    return ((4.0 * f1 - 1.0) * (4.0 * f2 - 1.0) / 3.0 + 1.0) / 4.0


cdef inline double distill_p(double f1, double f2) noexcept nogil:
    return 8.0 / 9.0 * f1 * f2 - 2.0 / 9.0 * (f1 + f2) + 5.0 / 9.0


cdef inline double distill_f(double f1, double f2, double p) noexcept nogil:
    return (10.0 / 9.0 * f1 * f2 - 1.0 / 9.0 * (f1 + f2) + 1.0 / 9.0) / p


cdef inline int nearest(Sim *sim, double f) noexcept nogil:
    cdef int m, best = 0
    cdef double gap, best_gap = 1e300
    for m in range(sim.m_star + 1):
        gap = fabs(f - sim.fids[m])
        if gap < best_gap:
            best = m
            best_gap = gap
    return best


cdef inline void buf_move(Buf *buf, int dst, int src) noexcept nogil:
    buf.lab[dst] = buf.lab[src]
    buf.fid[dst] = buf.fid[src]
    buf.orig[dst] = buf.orig[src]
    buf.held[dst] = buf.held[src]


cdef inline void buf_insert(Buf *buf, double f, int lab) noexcept nogil:
    # keep (label asc, fidelity desc); new pairs have held = 0
    cdef int i = buf.n
    while i > 0 and (buf.lab[i - 1] > lab or (buf.lab[i - 1] == lab and buf.fid[i - 1] < f)):
        buf_move(buf, i, i - 1)
        i -= 1
    buf.lab[i] = lab
    buf.fid[i] = f
    buf.orig[i] = f
    buf.held[i] = 0
    buf.n += 1


cdef inline void buf_remove(Buf *buf, int i) noexcept nogil:
    cdef int j
    for j in range(i, buf.n - 1):
        buf_move(buf, j, j + 1)
    buf.n -= 1


cdef inline int buf_find(Buf *buf, int lab, int start) noexcept nogil:
    cdef int i
    for i in range(start, buf.n):
        if buf.lab[i] == lab:
            return i
    return -1


cdef inline int64_t buf_rank(Buf *buf, const int64_t[:, ::1] lexw, Sim *sim) noexcept nogil:
    cdef int i, prev = 0, k = buf.n
    cdef int64_t r = sim.offsets[k]
    for i in range(k):
        r += lexw[k - i - 1, buf.lab[i]] - lexw[k - i - 1, prev]
        prev = buf.lab[i]
    return r


cdef inline void age_all(Buf *buf, Sim *sim) noexcept nogil:
    cdef int i
    for i in range(buf.n):
        buf.lab[i] += 1
        buf.held[i] += 1
        if buf.lab[i] <= sim.m_star:
            if sim.quantized:
                buf.fid[i] = sim.fids[buf.lab[i]]
            else:
                buf.fid[i] = buf.orig[i] * sim.fids[buf.held[i]]
    while buf.n > 0 and buf.lab[buf.n - 1] > sim.m_star:
        buf.n -= 1


cdef inline void admit(Buf *buf, Sim *sim) noexcept nogil:
    if buf.n >= sim.L:
        buf.n = sim.L - 1
    buf_insert(buf, 1.0 if not sim.quantized else sim.fids[0], 0)


cdef class _Runner:
    cdef Sim sim
    cdef const int64_t[::1] kind
    cdef const int64_t[::1] arg_x
    cdef const int64_t[::1] arg_y
    cdef const int64_t[::1] client
    cdef const int64_t[:, ::1] lexw
    cdef bitgen_t *rng
    cdef object keep

    def __cinit__(self, tables, rng):
        cdef int m
        self.sim.m_star = tables.m_star
        self.sim.L = tables.L
        if tables.L + 1 > MAXBUF or tables.m_star + 1 > MAXBUF:
            raise ValueError("buffer/age limits exceed compiled capacity")
        self.sim.quantized = 1 if tables.quantized else 0
        self.sim.lam1 = tables.lambda1
        self.sim.lam2 = tables.lambda2
        self.sim.f_th = tables.f_th
        for m in range(tables.m_star + 1):
            self.sim.fids[m] = tables.fids[m]
        for m in range(tables.L + 1):
            self.sim.offsets[m] = tables.offsets[m]
        self.sim.nbuf = tables.n_buffers
        self.kind = tables.kind
        self.arg_x = tables.arg_x
        self.arg_y = tables.arg_y
        self.client = tables.client
        self.lexw = tables.lexw
        self.keep = rng
        self.rng = <bitgen_t *> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")
        self.reset()

    cdef void reset(self) noexcept nogil:
        self.sim.a.n = 0
        self.sim.b.n = 0

    cdef int64_t state_index(self) noexcept nogil:
        return buf_rank(&self.sim.a, self.lexw, &self.sim) * self.sim.nbuf + \
            buf_rank(&self.sim.b, self.lexw, &self.sim)

    cdef int step(self, double *fid_out, int64_t *bad) noexcept nogil:
        """One time step; returns 1 on a counted delivery, 0 otherwise, -1 on policy miss."""
        cdef Sim *sim = &self.sim
        cdef double ua = self.rng.next_double(self.rng.state)
        cdef double ub = self.rng.next_double(self.rng.state)
        cdef int64_t s = self.state_index()
        cdef int64_t kind = self.kind[s]
        cdef int i, j, lab, success = 0
        cdef double f1, f2, f, p, ud
        cdef Buf *buf
        if kind < 0:
            bad[0] = s
            return -1
        if kind == 1:
            i = buf_find(&sim.a, <int> self.arg_x[s], 0)
            j = buf_find(&sim.b, <int> self.arg_y[s], 0)
            f = swap_fid(sim.a.fid[i], sim.b.fid[j])
            buf_remove(&sim.a, i)
            buf_remove(&sim.b, j)
            if f >= sim.f_th:
                success = 1
                fid_out[0] = f
        elif kind == 2:
            buf = &sim.a if self.client[s] == 0 else &sim.b
            i = buf_find(buf, <int> self.arg_x[s], 0)
            j = buf_find(buf, <int> self.arg_y[s], i + 1)
            f1 = buf.fid[i]
            f2 = buf.fid[j]
            buf_remove(buf, j)
            buf_remove(buf, i)
            p = distill_p(f1, f2)
            ud = self.rng.next_double(self.rng.state)
            if ud < p:
                f = distill_f(f1, f2, p)
                lab = nearest(sim, f)
                if sim.quantized:
                    f = sim.fids[lab]
                buf_insert(buf, f, lab)
        age_all(&sim.a, sim)
        age_all(&sim.b, sim)
        if ua < sim.lam1:
            admit(&sim.a, sim)
        if ub < sim.lam2:
            admit(&sim.b, sim)
        return success


def run_trajectory(tables, rng, Py_ssize_t steps):
    """Run ``steps`` steps from the empty state.

    Returns (success_times int64[:], delivered_fidelities float64[:], bad_state)
    where ``bad_state`` is -1 unless the policy had no action for a visited state.
    """
    cdef _Runner r = _Runner(tables, rng)
    times = np.empty(steps, dtype=np.int64)
    fids = np.empty(steps, dtype=np.float64)
    cdef int64_t[::1] tv = times
    cdef double[::1] fv = fids
    cdef Py_ssize_t t, n = 0
    cdef double f = 0.0
    cdef int64_t bad = -1
    cdef int res
    with rng.bit_generator.lock, nogil:
        for t in range(steps):
            res = r.step(&f, &bad)
            if res < 0:
                break
            if res == 1:
                tv[n] = t + 1
                fv[n] = f
                n += 1
    return times[:n].copy(), fids[:n].copy(), int(bad)


def episode_returns(tables, rng, Py_ssize_t n_episodes, Py_ssize_t horizon, double gamma):
    """Discounted returns of independent episodes started from the empty state."""
    cdef _Runner r = _Runner(tables, rng)
    out = np.empty(n_episodes, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t e, t
    cdef double g, disc, f = 0.0
    cdef int64_t bad = -1
    cdef int res
    with rng.bit_generator.lock, nogil:
        for e in range(n_episodes):
            r.reset()
            g = 0.0
            disc = 1.0
            for t in range(horizon):
                res = r.step(&f, &bad)
                if res < 0:
                    break
                if res == 1:
                    g = g + disc
                disc = disc * gamma
            if bad >= 0:
                break
            ov[e] = g
    return out, int(bad)
