# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loop for the disordered exclusion process.

Mirrors :mod:`bondsep._fallback` draw for draw: both consume the same
numpy bit generator through ``next_double`` and ``random_poisson`` so a
replica produces the same event sequence on either backend.

Channel layout for a window of ``S`` sites (array indices ``0..S-1``):

* ``0 .. S-2``  interior bond between sites ``c`` and ``c+1``
* ``S-1``       periodic: wrap bond ``S-1 -> 0``; reservoirs: left reservoir at site 0
* ``S``         reservoirs only: right reservoir at site ``S-1``
"""

from libc.math cimport log, INFINITY
from libc.stdlib cimport malloc, free
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_poisson

import numpy as np

cdef enum:
    LOST = -2


cdef struct Path:
    unsigned char *eta
    const double *rates
    long long *cur
    Py_ssize_t S
    Py_ssize_t C
    bint periodic
    double rho_l
    double rho_r
    Py_ssize_t tagged
    # rate tree (tree engine only)
    double *tree
    Py_ssize_t P
    # linear functionals
    Py_ssize_t F
    const double *w
    double *td
    double *tq
    double *fv
    double *fd
    double *fq


cdef inline Py_ssize_t left_channel(Path *p, Py_ssize_t i) noexcept nogil:
    if i > 0:
        return i - 1
    return p.S - 1


cdef inline Py_ssize_t right_channel(Path *p, Py_ssize_t i) noexcept nogil:
    if i < p.S - 1:
        return i
    if p.periodic:
        return p.S - 1
    return p.S


cdef inline void channel_sites(Path *p, Py_ssize_t c, Py_ssize_t *a, Py_ssize_t *b) noexcept nogil:
    # b < 0 marks a reservoir channel acting on site a
    if c < p.S - 1:
        a[0] = c
        b[0] = c + 1
    elif p.periodic:
        a[0] = p.S - 1
        b[0] = 0
    elif c == p.S - 1:
        a[0] = 0
        b[0] = -1
    else:
        a[0] = p.S - 1
        b[0] = -1


cdef inline double active_rate(Path *p, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t a, b
    cdef double rho
    channel_sites(p, c, &a, &b)
    if b >= 0:
        if p.eta[a] != p.eta[b]:
            return p.rates[c]
        return 0.0
    rho = p.rho_l if c == p.S - 1 else p.rho_r
    if p.eta[a]:
        return p.rates[c] * (1.0 - rho)
    return p.rates[c] * rho


cdef inline void tree_set(Path *p, Py_ssize_t c, double r) noexcept nogil:
    cdef Py_ssize_t i = p.P + c
    p.tree[i] = r
    i >>= 1
    while i >= 1:
        p.tree[i] = p.tree[2 * i] + p.tree[2 * i + 1]
        i >>= 1


cdef inline Py_ssize_t tree_pick(Path *p, double u) noexcept nogil:
    cdef Py_ssize_t i = 1
    cdef double left
    u = u * p.tree[1]
    while i < p.P:
        left = p.tree[2 * i]
        if u < left:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    return i - p.P


cdef inline void term(Path *p, Py_ssize_t j, Py_ssize_t c, double *d, double *q) noexcept nogil:
    cdef Py_ssize_t a, b
    cdef double dw, diff, rho, wa
    cdef const double *wj = p.w + j * p.S
    channel_sites(p, c, &a, &b)
    if b >= 0:
        dw = wj[b] - wj[a]
        diff = <double> p.eta[a] - <double> p.eta[b]
        d[0] = p.rates[c] * dw * diff
        q[0] = p.rates[c] * dw * dw * diff * diff
    else:
        rho = p.rho_l if c == p.S - 1 else p.rho_r
        wa = wj[a]
        if p.eta[a]:
            d[0] = p.rates[c] * wa * (rho - 1.0)
            q[0] = p.rates[c] * wa * wa * (1.0 - rho)
        else:
            d[0] = p.rates[c] * wa * rho
            q[0] = p.rates[c] * wa * wa * rho


cdef void refresh_channel(Path *p, Py_ssize_t c, bint use_tree) noexcept nogil:
    cdef Py_ssize_t j
    cdef double d, q
    if use_tree:
        tree_set(p, c, active_rate(p, c))
    for j in range(p.F):
        term(p, j, c, &d, &q)
        p.fd[j] += d - p.td[j * p.C + c]
        p.fq[j] += q - p.tq[j * p.C + c]
        p.td[j * p.C + c] = d
        p.tq[j * p.C + c] = q


cdef void resum_terms(Path *p) noexcept nogil:
    cdef Py_ssize_t j, c
    cdef double d, q
    for j in range(p.F):
        p.fd[j] = 0.0
        p.fq[j] = 0.0
        for c in range(p.C):
            term(p, j, c, &d, &q)
            p.td[j * p.C + c] = d
            p.tq[j * p.C + c] = q
            p.fd[j] += d
            p.fq[j] += q


cdef void refresh_sites(Path *p, Py_ssize_t a, Py_ssize_t b, bint use_tree) noexcept nogil:
    cdef Py_ssize_t ch[4]
    cdef Py_ssize_t n = 0, k, m, c
    cdef bint seen
    ch[0] = left_channel(p, a)
    ch[1] = right_channel(p, a)
    n = 2
    if b >= 0:
        ch[2] = left_channel(p, b)
        ch[3] = right_channel(p, b)
        n = 4
    for k in range(n):
        c = ch[k]
        seen = False
        for m in range(k):
            if ch[m] == c:
                seen = True
        if not seen:
            refresh_channel(p, c, use_tree)


cdef bint fire(Path *p, Py_ssize_t c, bitgen_t *rng, bint harris) noexcept nogil:
    """Apply one ring of channel ``c``; return whether the state changed."""
    cdef Py_ssize_t a, b, j
    cdef unsigned char ea, eb, new
    cdef double rho
    channel_sites(p, c, &a, &b)
    if b >= 0:
        ea = p.eta[a]
        eb = p.eta[b]
        if ea == eb:
            return False
        p.eta[a] = eb
        p.eta[b] = ea
        if ea:
            p.cur[c] += 1
            if p.tagged == a:
                p.tagged = b
            for j in range(p.F):
                p.fv[j] += p.w[j * p.S + b] - p.w[j * p.S + a]
        else:
            p.cur[c] -= 1
            if p.tagged == b:
                p.tagged = a
            for j in range(p.F):
                p.fv[j] += p.w[j * p.S + a] - p.w[j * p.S + b]
        return True
    rho = p.rho_l if c == p.S - 1 else p.rho_r
    if harris:
        new = 1 if rng.next_double(rng.state) < rho else 0
        if new == p.eta[a]:
            return False
    else:
        new = 1 - p.eta[a]
    p.eta[a] = new
    # entering from the left reservoir or leaving through the right one is +1
    if (c == p.S - 1) == (new == 1):
        p.cur[c] += 1
    else:
        p.cur[c] -= 1
    if new == 0 and p.tagged == a:
        p.tagged = LOST
    for j in range(p.F):
        if new:
            p.fv[j] += p.w[j * p.S + a]
        else:
            p.fv[j] -= p.w[j * p.S + a]
    return True


cdef inline Py_ssize_t alias_pick(double u, const double *prob, const Py_ssize_t *alias, Py_ssize_t C) noexcept nogil:
    cdef double x = u * C
    cdef Py_ssize_t j = <Py_ssize_t> x
    if j >= C:
        j = C - 1
    if x - j < prob[j]:
        return j
    return alias[j]


def run_path(
    object bit_generator,
    unsigned char[::1] eta,
    const double[::1] rates,
    bint periodic,
    double rho_left,
    double rho_right,
    Py_ssize_t tagged,
    const double[::1] sample_times,
    int engine,
    const double[::1] alias_prob,
    const Py_ssize_t[::1] alias_idx,
    const double[:, ::1] weights,
    long long[::1] currents,
    unsigned char[:, ::1] snap,
    const Py_ssize_t[::1] cur_sel,
    long long[:, ::1] cur_out,
    long long[::1] tag_out,
    double[:, ::1] f_val,
    double[:, ::1] f_drift,
    double[:, ::1] f_qv,
):
    """Advance one replica through ``sample_times``.

    ``engine`` is 0 for the thinned constant-rate engine and 1 for the
    rate tree over active channels. Returns ``(events, state_changes,
    tagged)``; arrays are updated in place.
    """
    cdef Path p
    cdef bitgen_t *rng
    cdef Py_ssize_t S = eta.shape[0]
    cdef Py_ssize_t C = rates.shape[0]
    cdef Py_ssize_t T = sample_times.shape[0]
    cdef Py_ssize_t F = weights.shape[0]
    cdef Py_ssize_t k = 0, c, a, b, i, j, n, m
    cdef bint harris = engine == 0
    cdef bint use_tree = engine == 1
    cdef bint keep_snap = snap.shape[0] > 0
    cdef bint timed = (not harris) or F > 0
    cdef double t = 0.0, next_ev, h, lam = 0.0, u
    cdef long long events = 0, changes = 0
    cdef unsigned char ea, eb
    cdef double *fd_int = NULL
    cdef double *fq_int = NULL

    if C != (S if periodic else S + 1):
        raise ValueError("channel count does not match the window")
    if weights.shape[0] > 0 and weights.shape[1] != S:
        raise ValueError("functional weights must have one column per site")

    capsule = bit_generator.capsule
    rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    p.eta = &eta[0]
    p.rates = &rates[0]
    p.cur = &currents[0]
    p.S = S
    p.C = C
    p.periodic = periodic
    p.rho_l = rho_left
    p.rho_r = rho_right
    p.tagged = tagged
    p.F = F
    p.w = &weights[0, 0] if F > 0 else NULL
    p.P = 1
    while p.P < C:
        p.P <<= 1
    p.tree = NULL
    p.td = NULL
    p.tq = NULL
    p.fv = NULL
    p.fd = NULL
    p.fq = NULL

    try:
        if use_tree:
            p.tree = <double *> malloc(2 * p.P * sizeof(double))
            for i in range(2 * p.P):
                p.tree[i] = 0.0
            for c in range(C):
                p.tree[p.P + c] = active_rate(&p, c)
            for i in range(p.P - 1, 0, -1):
                p.tree[i] = p.tree[2 * i] + p.tree[2 * i + 1]
        else:
            for c in range(C):
                lam += rates[c]
        if F > 0:
            p.td = <double *> malloc(F * C * sizeof(double))
            p.tq = <double *> malloc(F * C * sizeof(double))
            p.fv = <double *> malloc(F * sizeof(double))
            p.fd = <double *> malloc(F * sizeof(double))
            p.fq = <double *> malloc(F * sizeof(double))
            fd_int = <double *> malloc(F * sizeof(double))
            fq_int = <double *> malloc(F * sizeof(double))
            for j in range(F):
                p.fv[j] = 0.0
                for i in range(S):
                    if eta[i]:
                        p.fv[j] += weights[j, i]
                fd_int[j] = 0.0
                fq_int[j] = 0.0
            resum_terms(&p)

        with bit_generator.lock:
            with nogil:
                if timed:
                    next_ev = INFINITY
                    if use_tree:
                        if p.tree[1] > 0.0:
                            next_ev = -log(1.0 - rng.next_double(rng.state)) / p.tree[1]
                    elif lam > 0.0:
                        next_ev = -log(1.0 - rng.next_double(rng.state)) / lam
                while k < T:
                    if timed and next_ev <= sample_times[k]:
                        h = next_ev - t
                        for j in range(F):
                            fd_int[j] += p.fd[j] * h
                            fq_int[j] += p.fq[j] * h
                        t = next_ev
                        u = rng.next_double(rng.state)
                        if use_tree:
                            c = tree_pick(&p, u)
                            if p.tree[p.P + c] <= 0.0:
                                # rounding at a zero-rate leaf: redraw the time
                                next_ev = t - log(1.0 - rng.next_double(rng.state)) / p.tree[1]
                                continue
                        else:
                            c = alias_pick(u, &alias_prob[0], &alias_idx[0], C)
                        events += 1
                        if fire(&p, c, rng, harris):
                            changes += 1
                            channel_sites(&p, c, &a, &b)
                            if use_tree or F > 0:
                                refresh_sites(&p, a, b, use_tree)
                        if use_tree:
                            if p.tree[1] > 0.0:
                                next_ev = t - log(1.0 - rng.next_double(rng.state)) / p.tree[1]
                            else:
                                next_ev = INFINITY
                        else:
                            next_ev = t - log(1.0 - rng.next_double(rng.state)) / lam
                        continue
                    if not timed and sample_times[k] > t:
                        n = random_poisson(rng, lam * (sample_times[k] - t))
                        events += n
                        for m in range(n):
                            c = alias_pick(rng.next_double(rng.state), &alias_prob[0], &alias_idx[0], C)
                            if c < S - 1:
                                # interior bond, inlined: swap discrepant endpoints
                                # (branch-free: a ring on equal endpoints writes them back unchanged)
                                ea = p.eta[c]
                                eb = p.eta[c + 1]
                                p.eta[c] = eb
                                p.eta[c + 1] = ea
                                p.cur[c] += <long long> ea - <long long> eb
                                changes += ea ^ eb
                                if p.tagged == c + eb and ea != eb:
                                    p.tagged = c + ea
                            elif fire(&p, c, rng, harris):
                                changes += 1
                    # record sample k
                    if timed:
                        h = sample_times[k] - t
                        for j in range(F):
                            fd_int[j] += p.fd[j] * h
                            fq_int[j] += p.fq[j] * h
                    if sample_times[k] > t:
                        t = sample_times[k]
                    if keep_snap:
                        for i in range(S):
                            snap[k, i] = eta[i]
                    for i in range(cur_sel.shape[0]):
                        cur_out[k, i] = currents[cur_sel[i]]
                    tag_out[k] = p.tagged
                    if F > 0:
                        resum_terms(&p)
                        for j in range(F):
                            f_val[k, j] = p.fv[j]
                            f_drift[k, j] = fd_int[j]
                            f_qv[k, j] = fq_int[j]
                    k += 1
    finally:
        free(p.tree)
        free(p.td)
        free(p.tq)
        free(p.fv)
        free(p.fd)
        free(p.fq)
        free(fd_int)
        free(fq_int)
    return events, changes, p.tagged
