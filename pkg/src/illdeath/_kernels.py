"""Compiled inner loops.

Every quantity here is a per-subject sum over the jump times of the baseline
step hazards, so the cost is O(n * number of jump times).  All loops run in a
fixed order (subject index, then time) so results are deterministic.
"""

import math

import numpy as np
from numba import njit

# Denominators below this are treated as an empty risk set.
DENOM_FLOOR = 1e-12


@njit(cache=True)
def breslow_1dot(t, fixed12, fixed13, N12, N13, V, R, a, b, w, theta, use_R, start):
    """Forward recursion for the healthy-state jumps.

    Subjects are sorted by ``V`` ascending; ``start[m]`` is the first subject
    with ``V >= t[m]``.  Positions with a fixed jump (life-table prefix) keep
    it.  Returns ``(dH12, dH13, failed_index)`` with ``failed_index = -1`` on
    success.
    """
    M = t.shape[0]
    n = V.shape[0]
    A = np.zeros(n)
    ebuf = np.ones(n)
    dH12 = fixed12.copy()
    dH13 = fixed13.copy()
    G12 = 0.0
    G13 = 0.0
    for m in range(M):
        s = start[m]
        D12 = 0.0
        D13 = 0.0
        tm = t[m]
        for i in range(s, n):
            if theta > 0.0:
                e = math.exp(theta * (a[i] * G12 + b[i] * G13))
            else:
                e = 1.0
            ebuf[i] = e
            if (not use_R) or R[i] <= tm:
                f = w[i] * e / (1.0 + theta * A[i])
                D12 += f * a[i]
                D13 += f * b[i]
        if N12[m] > 0.0:
            if D12 < DENOM_FLOOR:
                return dH12, dH13, m
            dH12[m] = fixed12[m] + N12[m] / D12
        if N13[m] > 0.0:
            if D13 < DENOM_FLOOR:
                return dH12, dH13, m
            dH13[m] = fixed13[m] + N13[m] / D13
        j12 = dH12[m]
        j13 = dH13[m]
        if j12 != 0.0 or j13 != 0.0:
            for i in range(s, n):
                A[i] += (a[i] * j12 + b[i] * j13) * ebuf[i]
        G12 += j12
        G13 += j13
    return dH12, dH13, -1


@njit(cache=True)
def breslow_23(u, N23, V, W, R, c, w, A1V, theta, use_R):
    """Forward recursion for the diseased-state jumps (diseased subjects only)."""
    M = u.shape[0]
    n = V.shape[0]
    A = np.zeros(n)
    A0 = np.zeros(n)
    entered = np.zeros(n, dtype=np.bool_)
    ebuf = np.ones(n)
    dH = np.zeros(M)
    kappa = theta / (1.0 + theta)
    G = 0.0
    for m in range(M):
        um = u[m]
        D = 0.0
        for i in range(n):
            if W[i] < um:
                continue
            if theta > 0.0:
                e = math.exp(kappa * c[i] * G)
            else:
                e = 1.0
            ebuf[i] = e
            if V[i] <= um:
                if not entered[i]:
                    A0[i] = A[i]
                    entered[i] = True
                if (not use_R) or R[i] < um:
                    Adot = A1V[i] + A[i] - A0[i]
                    D += w[i] * c[i] * e / (1.0 + theta * Adot)
        if N23[m] > 0.0:
            if D < DENOM_FLOOR:
                return dH, m
            dH[m] = N23[m] / D
        jm = dH[m] / (1.0 + theta)
        for i in range(n):
            if W[i] >= um:
                A[i] += jm * c[i] * ebuf[i]
        G += dH[m]
    return dH, -1


@njit(cache=True)
def a1dot_sums(m_lo, m_hi, a, b, dH12, dH13, G12, G13, theta):
    """Cumulative healthy-state intensity ``A12 + A13`` and its derivatives.

    For subject ``i`` the sum runs over the first ``m_hi[i]`` jump times; the
    partial sum over the first ``m_lo[i]`` is reported as well.  The four
    columns are the value and its derivatives with respect to the two linear
    predictors and ``theta``.  Output shape ``(n, 2, 4)``.
    """
    n = a.shape[0]
    out = np.zeros((n, 2, 4))
    for i in range(n):
        ai = a[i]
        bi = b[i]
        lo = m_lo[i]
        hi = m_hi[i]
        s0 = 0.0
        sa = 0.0
        sb = 0.0
        st = 0.0
        for l in range(hi):
            if l == lo:
                out[i, 0, 0] = s0
                out[i, 0, 1] = sa
                out[i, 0, 2] = sb
                out[i, 0, 3] = st
            x = ai * G12[l] + bi * G13[l]
            e = math.exp(theta * x)
            p12 = ai * dH12[l] * e
            p13 = bi * dH13[l] * e
            inc = p12 + p13
            s0 += inc
            sa += p12 + inc * theta * ai * G12[l]
            sb += p13 + inc * theta * bi * G13[l]
            st += inc * x
        if lo >= hi:
            out[i, 0, 0] = s0
            out[i, 0, 1] = sa
            out[i, 0, 2] = sb
            out[i, 0, 3] = st
        out[i, 1, 0] = s0
        out[i, 1, 1] = sa
        out[i, 1, 2] = sb
        out[i, 1, 3] = st
    return out


@njit(cache=True)
def a23_sums(cuts, c, dH, G, theta):
    """Cumulative diseased-state intensity ``A23`` at nondecreasing cut counts.

    ``cuts`` has shape ``(n, k)``; column ``j`` is the number of jump times
    included in the ``j``-th reported sum.  Output ``(n, k, 3)``: value and
    derivatives with respect to the linear predictor and ``theta``.
    """
    n, k = cuts.shape
    out = np.zeros((n, k, 3))
    kappa = theta / (1.0 + theta)
    dkappa = 1.0 / ((1.0 + theta) * (1.0 + theta))
    inv = 1.0 / (1.0 + theta)
    for i in range(n):
        ci = c[i]
        s0 = 0.0
        se = 0.0
        st = 0.0
        l = 0
        for j in range(k):
            hi = cuts[i, j]
            while l < hi:
                cg = ci * G[l]
                e = math.exp(kappa * cg)
                inc = dH[l] * ci * e * inv
                s0 += inc
                se += inc * (1.0 + kappa * cg)
                st += inc * (cg * dkappa - inv)
                l += 1
            out[i, j, 0] = s0
            out[i, j, 1] = se
            out[i, j, 2] = st
    return out
