"""Hot loops on dense qubit operators.

Every kernel has a numba implementation (``*_nb``) and a pure-numpy one
(``*_np``). The public name is bound to one of them at import time:
numba is used unless ``LINDLEARN_DISABLE_NUMBA=1`` is set or numba cannot
be imported. Both variants are importable directly so tests and the
benchmark can compare them.

Conventions: ``n`` qubits, dimension ``d = 2**n``, site ``s`` is 0-based and
site 0 is the most significant bit of a basis index (``kron`` order).
A single-site superoperator is a tensor ``om[a, b, a', b']`` acting as
``X[.a'., .b'.] -> X[.a., .b.]``; for a jump ``V`` on that site the
dissipator ``V X V^dag`` has ``om = einsum('ax,by->abxy', V, V.conj())``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LINDLEARN_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _bit(s, n):
    return 1 << (n - 1 - s)


# --------------------------------------------------------------------------
# numpy reference implementations
# --------------------------------------------------------------------------


def lmul_site_np(X, U, s, n):
    """(U on site s) @ X for a 2-D ``X`` with ``2**n`` rows."""
    shape = X.shape
    Xr = X.reshape(2**s, 2, -1)
    return np.einsum("ab,ibj->iaj", U, Xr).reshape(shape)


def rmul_site_np(X, U, s, n):
    """X @ (U on site s) for a 2-D ``X`` with ``2**n`` columns."""
    rows = X.shape[0]
    Xr = X.reshape(rows, 2**s, 2, 2 ** (n - s - 1))
    return np.einsum("ribj,ba->riaj", Xr, U).reshape(X.shape)


def dissipate_np(X, om, active, n):
    """Sum over active sites of the single-site superoperators on a batch."""
    B, d, _ = X.shape
    out = np.zeros_like(X)
    for s in range(n):
        if not active[s]:
            continue
        lo, hi = 2**s, 2 ** (n - s - 1)
        X7 = X.reshape(B, lo, 2, hi, lo, 2, hi)
        out += np.einsum("abxy,kixjlym->kiajlbm", om[s], X7).reshape(B, d, d)
    return out


def super_terms_np(X, idx, sites, oms, nout, n):
    d = X.shape[0]
    out = np.zeros((nout, d, d), dtype=np.complex128)
    for t in range(len(idx)):
        s = sites[t]
        lo, hi = 2**s, 2 ** (n - s - 1)
        X6 = X.reshape(lo, 2, hi, lo, 2, hi)
        out[idx[t]] += np.einsum("abxy,ixjlym->iajlbm", oms[t], X6).reshape(d, d)
    return out


def lmul_terms_np(X, idx, coef, nf, sites, mats, nout, n):
    d, m = X.shape
    out = np.zeros((nout, d, m), dtype=np.complex128)
    for t in range(len(idx)):
        Y = lmul_site_np(X, mats[t, 0], sites[t, 0], n)
        if nf[t] == 2:
            Y = lmul_site_np(Y, mats[t, 1], sites[t, 1], n)
        out[idx[t]] += coef[t] * Y
    return out


def trace_terms_np(C, idx, coef, nf, sites, mats, nout, n):
    """vals[idx[t]] += coef[t] * tr((product of factors) @ C).

    Two-factor terms must act on distinct sites (the numba kernel relies on it).
    """
    vals = np.zeros(nout, dtype=np.complex128)
    for t in range(len(idx)):
        Y = lmul_site_np(C, mats[t, 0], sites[t, 0], n)
        if nf[t] == 2:
            Y = lmul_site_np(Y, mats[t, 1], sites[t, 1], n)
        vals[idx[t]] += coef[t] * np.trace(Y)
    return vals


def reduced_product_np(A, B, s, n):
    """Partial trace over all sites but ``s`` of ``A @ B`` (2x2)."""
    d = A.shape[0]
    lo, hi = 2**s, 2 ** (n - s - 1)
    Ar = A.reshape(lo, 2, hi, d)
    Br = B.reshape(d, lo, 2, hi)
    return np.einsum("iark,kibr->ab", Ar, Br)


def sse_first_np(psi, S, V, dW):
    """Batch semi-implicit Euler step; psi is (T, d), dW is (T, nv)."""
    Vpsi = np.einsum("jab,tb->tja", V, psi)
    rhs = psi + np.einsum("tja,tj->ta", Vpsi, dW)
    return rhs @ S.T


def sse_second_np(psi, F0, Bj, Cjk, dW, U):
    """Batch second-order weak step.

    ``Bj[j]`` multiplies dW_j, ``Cjk[j1, j2]`` multiplies
    ``dW_j1 dW_j2 + U_j1j2``; U is (T, nv, nv).
    """
    out = psi @ F0.T
    out += np.einsum("jab,tb,tj->ta", Bj, psi, dW)
    coef = np.einsum("tj,tk->tjk", dW, dW) + U
    out += np.einsum("jkab,tb,tjk->ta", Cjk, psi, coef)
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def lmul_site_nb(X, U, s, n):
        d, m = X.shape
        bit = 1 << (n - 1 - s)
        out = np.empty_like(X)
        u00, u01, u10, u11 = U[0, 0], U[0, 1], U[1, 0], U[1, 1]
        for r in range(d):
            if r & bit:
                continue
            r1 = r | bit
            for c in range(m):
                x0 = X[r, c]
                x1 = X[r1, c]
                out[r, c] = u00 * x0 + u01 * x1
                out[r1, c] = u10 * x0 + u11 * x1
        return out

    @njit(cache=True)
    def rmul_site_nb(X, U, s, n):
        rows, d = X.shape
        bit = 1 << (n - 1 - s)
        out = np.empty_like(X)
        u00, u01, u10, u11 = U[0, 0], U[0, 1], U[1, 0], U[1, 1]
        for r in range(rows):
            for c in range(d):
                if c & bit:
                    continue
                c1 = c | bit
                x0 = X[r, c]
                x1 = X[r, c1]
                out[r, c] = x0 * u00 + x1 * u10
                out[r, c1] = x0 * u01 + x1 * u11
        return out

    @njit(cache=True)
    def _super_site_acc(X, om, s, n, out, scale):
        # out += scale * (site superoperator om applied to X), one 2x2 block at a time
        d = X.shape[0]
        bit = 1 << (n - 1 - s)
        low = bit - 1
        w = np.empty((4, 4), dtype=np.complex128)
        for a in range(2):
            for b in range(2):
                for x in range(2):
                    for y in range(2):
                        w[2 * a + b, 2 * x + y] = om[a, b, x, y] * scale
        w00, w01, w02, w03 = w[0, 0], w[0, 1], w[0, 2], w[0, 3]
        w10, w11, w12, w13 = w[1, 0], w[1, 1], w[1, 2], w[1, 3]
        w20, w21, w22, w23 = w[2, 0], w[2, 1], w[2, 2], w[2, 3]
        w30, w31, w32, w33 = w[3, 0], w[3, 1], w[3, 2], w[3, 3]
        half = d // 2
        for i in range(half):
            r0 = ((i & ~low) << 1) | (i & low)
            r1 = r0 | bit
            for j in range(half):
                c0 = ((j & ~low) << 1) | (j & low)
                c1 = c0 | bit
                x0 = X[r0, c0]
                x1 = X[r0, c1]
                x2 = X[r1, c0]
                x3 = X[r1, c1]
                out[r0, c0] += w00 * x0 + w01 * x1 + w02 * x2 + w03 * x3
                out[r0, c1] += w10 * x0 + w11 * x1 + w12 * x2 + w13 * x3
                out[r1, c0] += w20 * x0 + w21 * x1 + w22 * x2 + w23 * x3
                out[r1, c1] += w30 * x0 + w31 * x1 + w32 * x2 + w33 * x3

    @njit(cache=True)
    def dissipate_nb(X, om, active, n):
        B, d, _ = X.shape
        out = np.zeros_like(X)
        for k in range(B):
            for s in range(n):
                if active[s]:
                    _super_site_acc(X[k], om[s], s, n, out[k], 1.0 + 0.0j)
        return out

    @njit(cache=True)
    def super_terms_nb(X, idx, sites, oms, nout, n):
        d = X.shape[0]
        out = np.zeros((nout, d, d), dtype=np.complex128)
        for t in range(idx.shape[0]):
            _super_site_acc(X, oms[t], sites[t], n, out[idx[t]], 1.0 + 0.0j)
        return out

    @njit(cache=True)
    def lmul_terms_nb(X, idx, coef, nf, sites, mats, nout, n):
        d, m = X.shape
        out = np.zeros((nout, d, m), dtype=np.complex128)
        for t in range(idx.shape[0]):
            Y = lmul_site_nb(X, mats[t, 0], sites[t, 0], n)
            if nf[t] == 2:
                Y = lmul_site_nb(Y, mats[t, 1], sites[t, 1], n)
            o = out[idx[t]]
            c = coef[t]
            for r in range(d):
                for j in range(m):
                    o[r, j] += c * Y[r, j]
        return out

    @njit(cache=True)
    def trace_terms_nb(C, idx, coef, nf, sites, mats, nout, n):
        d = C.shape[0]
        vals = np.zeros(nout, dtype=np.complex128)
        for t in range(idx.shape[0]):
            s1 = sites[t, 0]
            b1 = 1 << (n - 1 - s1)
            U1 = mats[t, 0]
            acc = 0.0 + 0.0j
            if nf[t] == 1:
                # tr((U on s1) C) = sum_r sum_x U[a(r), x] C[r(x), r]
                for r in range(d):
                    a = (r >> (n - 1 - s1)) & 1
                    r0 = r & ~b1
                    acc += U1[a, 0] * C[r0, r] + U1[a, 1] * C[r0 | b1, r]
            else:
                s2 = sites[t, 1]
                b2 = 1 << (n - 1 - s2)
                U2 = mats[t, 1]
                for r in range(d):
                    a1 = (r >> (n - 1 - s1)) & 1
                    a2 = (r >> (n - 1 - s2)) & 1
                    r0 = r & ~b1 & ~b2
                    for x1 in range(2):
                        for x2 in range(2):
                            w = U1[a1, x1] * U2[a2, x2]
                            if w != 0:
                                acc += w * C[r0 | (x1 * b1) | (x2 * b2), r]
            vals[idx[t]] += coef[t] * acc
        return vals

    @njit(cache=True)
    def reduced_product_nb(A, B, s, n):
        d = A.shape[0]
        bit = 1 << (n - 1 - s)
        red = np.zeros((2, 2), dtype=np.complex128)
        for r0 in range(d):
            if r0 & bit:
                continue
            for a in range(2):
                ra = r0 | (a * bit)
                for b in range(2):
                    rb = r0 | (b * bit)
                    acc = 0.0 + 0.0j
                    for k in range(d):
                        acc += A[ra, k] * B[k, rb]
                    red[a, b] += acc
        return red

    @njit(cache=True)
    def sse_first_nb(psi, S, V, dW):
        T, d = psi.shape
        nv = V.shape[0]
        out = np.empty_like(psi)
        rhs = np.empty(d, dtype=np.complex128)
        for t in range(T):
            for a in range(d):
                rhs[a] = psi[t, a]
            for j in range(nv):
                w = dW[t, j]
                if w == 0:
                    continue
                for a in range(d):
                    acc = 0.0 + 0.0j
                    for b in range(d):
                        acc += V[j, a, b] * psi[t, b]
                    rhs[a] += w * acc
            for a in range(d):
                acc = 0.0 + 0.0j
                for b in range(d):
                    acc += S[a, b] * rhs[b]
                out[t, a] = acc
        return out

    @njit(cache=True)
    def sse_second_nb(psi, F0, Bj, Cjk, dW, U):
        T, d = psi.shape
        nv = Bj.shape[0]
        out = np.empty_like(psi)
        for t in range(T):
            for a in range(d):
                acc = 0.0 + 0.0j
                for b in range(d):
                    acc += F0[a, b] * psi[t, b]
                out[t, a] = acc
            for j in range(nv):
                w = dW[t, j]
                if w == 0:
                    continue
                for a in range(d):
                    acc = 0.0 + 0.0j
                    for b in range(d):
                        acc += Bj[j, a, b] * psi[t, b]
                    out[t, a] += w * acc
            for j in range(nv):
                for k in range(nv):
                    w = dW[t, j] * dW[t, k] + U[t, j, k]
                    if w == 0:
                        continue
                    for a in range(d):
                        acc = 0.0 + 0.0j
                        for b in range(d):
                            acc += Cjk[j, k, a, b] * psi[t, b]
                        out[t, a] += w * acc
        return out


_NAMES = (
    "lmul_site",
    "rmul_site",
    "dissipate",
    "super_terms",
    "lmul_terms",
    "trace_terms",
    "reduced_product",
    "sse_first",
    "sse_second",
)


def backend():
    return "numba" if USE_NUMBA else "numpy"


def _bind(use_numba):
    g = globals()
    for name in _NAMES:
        g[name] = g[name + ("_nb" if use_numba else "_np")]


_bind(USE_NUMBA)
