"""Pure-Python event loop, used when the compiled kernel is unavailable.

Draw-for-draw identical to ``_kernel.run_path``: the same uniforms are taken
from the same bit generator in the same order, so a replica run on either
backend yields the same trajectory. Expect roughly 1e6 events per second.
"""

from __future__ import annotations

import math

import numpy as np

LOST = -2


def run_path(
    bit_generator,
    eta,
    rates,
    periodic,
    rho_left,
    rho_right,
    tagged,
    sample_times,
    engine,
    alias_prob,
    alias_idx,
    weights,
    currents,
    snap,
    cur_sel,
    cur_out,
    tag_out,
    f_val,
    f_drift,
    f_qv,
):
    S = eta.shape[0]
    C = rates.shape[0]
    F = weights.shape[0]
    if C != (S if periodic else S + 1):
        raise ValueError("channel count does not match the window")
    if F > 0 and weights.shape[1] != S:
        raise ValueError("functional weights must have one column per site")

    gen = np.random.Generator(bit_generator)
    rand = gen.random
    harris = engine == 0
    use_tree = engine == 1
    timed = (not harris) or F > 0
    keep_snap = snap.shape[0] > 0

    e = [int(v) for v in eta]
    r = [float(v) for v in rates]
    cur = [int(v) for v in currents]
    w = [[float(v) for v in row] for row in weights]
    aprob = [float(v) for v in alias_prob]
    aidx = [int(v) for v in alias_idx]
    state = {"tagged": int(tagged)}

    def sites(c):
        if c < S - 1:
            return c, c + 1
        if periodic:
            return S - 1, 0
        return (0, -1) if c == S - 1 else (S - 1, -1)

    def left_channel(i):
        return i - 1 if i > 0 else S - 1

    def right_channel(i):
        if i < S - 1:
            return i
        return S - 1 if periodic else S

    def reservoir_rho(c):
        return rho_left if c == S - 1 else rho_right

    def active_rate(c):
        a, b = sites(c)
        if b >= 0:
            return r[c] if e[a] != e[b] else 0.0
        rho = reservoir_rho(c)
        return r[c] * (1.0 - rho) if e[a] else r[c] * rho

    P = 1
    while P < C:
        P <<= 1
    tree = [0.0] * (2 * P)

    def tree_set(c, value):
        i = P + c
        tree[i] = value
        i >>= 1
        while i >= 1:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i >>= 1

    def tree_pick(u):
        i = 1
        u = u * tree[1]
        while i < P:
            left = tree[2 * i]
            if u < left:
                i = 2 * i
            else:
                u -= left
                i = 2 * i + 1
        return i - P

    def term(j, c):
        a, b = sites(c)
        wj = w[j]
        if b >= 0:
            dw = wj[b] - wj[a]
            diff = float(e[a]) - float(e[b])
            return r[c] * dw * diff, r[c] * dw * dw * diff * diff
        rho = reservoir_rho(c)
        wa = wj[a]
        if e[a]:
            return r[c] * wa * (rho - 1.0), r[c] * wa * wa * (1.0 - rho)
        return r[c] * wa * rho, r[c] * wa * wa * rho

    td = [[0.0] * C for _ in range(F)]
    tq = [[0.0] * C for _ in range(F)]
    fv = [0.0] * F
    fd = [0.0] * F
    fq = [0.0] * F

    def resum_terms():
        for j in range(F):
            fd[j] = 0.0
            fq[j] = 0.0
            for c in range(C):
                d, q = term(j, c)
                td[j][c] = d
                tq[j][c] = q
                fd[j] += d
                fq[j] += q

    def refresh_channel(c):
        if use_tree:
            tree_set(c, active_rate(c))
        for j in range(F):
            d, q = term(j, c)
            fd[j] += d - td[j][c]
            fq[j] += q - tq[j][c]
            td[j][c] = d
            tq[j][c] = q

    def refresh_sites(a, b):
        ch = [left_channel(a), right_channel(a)]
        if b >= 0:
            ch += [left_channel(b), right_channel(b)]
        seen = []
        for c in ch:
            if c not in seen:
                seen.append(c)
                refresh_channel(c)

    def fire(c):
        a, b = sites(c)
        if b >= 0:
            ea, eb = e[a], e[b]
            if ea == eb:
                return False
            e[a], e[b] = eb, ea
            if ea:
                cur[c] += 1
                if state["tagged"] == a:
                    state["tagged"] = b
                for j in range(F):
                    fv[j] += w[j][b] - w[j][a]
            else:
                cur[c] -= 1
                if state["tagged"] == b:
                    state["tagged"] = a
                for j in range(F):
                    fv[j] += w[j][a] - w[j][b]
            return True
        rho = reservoir_rho(c)
        if harris:
            new = 1 if rand() < rho else 0
            if new == e[a]:
                return False
        else:
            new = 1 - e[a]
        e[a] = new
        if (c == S - 1) == (new == 1):
            cur[c] += 1
        else:
            cur[c] -= 1
        if new == 0 and state["tagged"] == a:
            state["tagged"] = LOST
        for j in range(F):
            if new:
                fv[j] += w[j][a]
            else:
                fv[j] -= w[j][a]
        return True

    def alias_pick(u):
        x = u * C
        j = int(x)
        if j >= C:
            j = C - 1
        return j if x - j < aprob[j] else aidx[j]

    lam = 0.0
    if use_tree:
        for c in range(C):
            tree[P + c] = active_rate(c)
        for i in range(P - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
    else:
        for c in range(C):
            lam += r[c]
    fd_int = [0.0] * F
    fq_int = [0.0] * F
    if F > 0:
        for j in range(F):
            fv[j] = 0.0
            for i in range(S):
                if e[i]:
                    fv[j] += w[j][i]
        resum_terms()

    T = sample_times.shape[0]
    times = [float(v) for v in sample_times]
    t = 0.0
    k = 0
    events = 0
    changes = 0
    next_ev = math.inf
    if timed:
        if use_tree:
            if tree[1] > 0.0:
                next_ev = -math.log(1.0 - rand()) / tree[1]
        elif lam > 0.0:
            next_ev = -math.log(1.0 - rand()) / lam
    while k < T:
        if timed and next_ev <= times[k]:
            h = next_ev - t
            for j in range(F):
                fd_int[j] += fd[j] * h
                fq_int[j] += fq[j] * h
            t = next_ev
            u = rand()
            if use_tree:
                c = tree_pick(u)
                if tree[P + c] <= 0.0:
                    next_ev = t - math.log(1.0 - rand()) / tree[1]
                    continue
            else:
                c = alias_pick(u)
            events += 1
            if fire(c):
                changes += 1
                a, b = sites(c)
                if use_tree or F > 0:
                    refresh_sites(a, b)
            if use_tree:
                next_ev = t - math.log(1.0 - rand()) / tree[1] if tree[1] > 0.0 else math.inf
            else:
                next_ev = t - math.log(1.0 - rand()) / lam
            continue
        if not timed and times[k] > t:
            n = int(gen.poisson(lam * (times[k] - t)))
            for _ in range(n):
                c = alias_pick(rand())
                events += 1
                if fire(c):
                    changes += 1
        if timed:
            h = times[k] - t
            for j in range(F):
                fd_int[j] += fd[j] * h
                fq_int[j] += fq[j] * h
        if times[k] > t:
            t = times[k]
        if keep_snap:
            snap[k, :] = e
        for i, c in enumerate(cur_sel):
            cur_out[k, i] = cur[c]
        tag_out[k] = state["tagged"]
        if F > 0:
            resum_terms()
            for j in range(F):
                f_val[k, j] = fv[j]
                f_drift[k, j] = fd_int[j]
                f_qv[k, j] = fq_int[j]
        k += 1

    eta[:] = e
    currents[:] = cur
    return events, changes, state["tagged"]
