"""Stochastic Schrodinger unraveling of the Kraus integrators.

Linear (norm non-preserving) trajectories whose rank-one average
reproduces the density matrix. The first-order step uses Gaussian
increments; the second-order weak step uses three-point increments
``dW in {-sqrt(3dt), 0, sqrt(3dt)}`` with probabilities ``1/6, 2/3, 1/6``
and two-point auxiliary variables ``U``. The one-step expectation of each
stepper equals the matching Kraus map exactly, which
:func:`enumerate_one_step` checks by summing over the finite noise support.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .propagator import KrausMap, observable_matrix

SCHEMES = ("first", "second")
MAX_ENUM_JUMPS = 3


@dataclass(frozen=True)
class NoiseDraw:
    """Increments for one step: ``dW`` (n_v,) and, second order only, ``U`` (n_v, n_v)."""

    dW: np.ndarray
    U: np.ndarray | None = None


class SSEStepper:
    """Precomputed operators of one SSE scheme for fixed ``ops`` and ``dt``."""

    def __init__(self, ops, dt, scheme):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown SSE scheme {scheme!r}")
        self.scheme = scheme
        self.dt = dt
        self.n_v = len(ops.V)
        self.K = KrausMap(ops, order=1 if scheme == "first" else 2, dt=dt)
        d = ops.dim
        V = np.array(ops.V, dtype=np.complex128).reshape(self.n_v, d, d)
        S = self.K.S
        if scheme == "first":
            self.S = S
            self.V = V
        else:
            self.F0 = self.K.F0
            # S (V_j + dt/2 V_j G) = S V_j P
            self.Bj = np.array([S @ v @ self.K.P for v in V]).reshape(self.n_v, d, d)
            # coefficient of dW_j1 dW_j2 + U_j1j2 is S V_j2 V_j1 / 2
            self.Cjk = np.empty((self.n_v, self.n_v, d, d), dtype=np.complex128)
            for j1 in range(self.n_v):
                for j2 in range(self.n_v):
                    self.Cjk[j1, j2] = 0.5 * S @ V[j2] @ V[j1]

    def step(self, psi, dW, U=None):
        """Advance a batch ``psi`` (T, d) with increments ``dW`` (T, n_v)."""
        psi = np.ascontiguousarray(psi, dtype=np.complex128)
        dW = np.ascontiguousarray(dW, dtype=np.float64).astype(np.complex128)
        if self.scheme == "first":
            if self.n_v == 0:
                return psi @ self.S.T
            return kern.sse_first(psi, self.S, self.V, dW)
        if self.n_v == 0:
            return psi @ self.F0.T
        U = np.ascontiguousarray(U, dtype=np.float64).astype(np.complex128)
        return kern.sse_second(psi, self.F0, self.Bj, self.Cjk, dW, U)


def sample_noise(rng, scheme, dt, n_v, T):
    """Increments for ``T`` trajectories: ``dW`` (T, n_v) and ``U`` (T, n_v, n_v) or None."""
    if scheme == "first":
        return rng.normal(scale=np.sqrt(dt), size=(T, n_v)), None
    u = rng.random((T, n_v))
    dW = np.sqrt(3.0 * dt) * ((u > 5.0 / 6.0).astype(float) - (u < 1.0 / 6.0).astype(float))
    U = np.zeros((T, n_v, n_v))
    if n_v > 1:
        lo = np.tril_indices(n_v, k=-1)
        signs = 2.0 * rng.integers(0, 2, size=(T, len(lo[0]))) - 1.0
        U[:, lo[0], lo[1]] = signs * dt
        U[:, lo[1], lo[0]] = -signs * dt
    idx = np.arange(n_v)
    U[:, idx, idx] = -dt
    return dW, U


def sse_step_first(psi, ops, dt, noise):
    """``(I - G dt)^{-1} (I + sum_j V_j dW_j) psi`` for one state."""
    st = SSEStepper(ops, dt, "first")
    return st.step(np.asarray(psi)[None], np.asarray(noise.dW)[None])[0]


def sse_step_second(psi, ops, dt, noise):
    """Second-order weak step for one state; ``noise.U`` must be set."""
    if noise.U is None:
        raise ValueError("second-order step needs the auxiliary U variables")
    st = SSEStepper(ops, dt, "second")
    return st.step(np.asarray(psi)[None], np.asarray(noise.dW)[None], np.asarray(noise.U)[None])[0]


@dataclass
class MCResult:
    rho: np.ndarray
    stderr: np.ndarray
    n_traj: int
    expectations: np.ndarray | None = None
    expectation_stderr: np.ndarray | None = None


def _run_block(stepper, psi0, steps, T, seed_seq, Amat):
    rng = np.random.default_rng(seed_seq)
    psi = np.repeat(psi0[None], T, axis=0)
    for _ in range(steps):
        dW, U = sample_noise(rng, stepper.scheme, stepper.dt, stepper.n_v, T)
        psi = stepper.step(psi, dW, U)
    outer = np.einsum("ta,tb->tab", psi, psi.conj())
    s1 = outer.sum(axis=0)
    s2 = (outer.real**2).sum(axis=0) + 1j * (outer.imag**2).sum(axis=0)
    if Amat is None:
        return s1, s2, None, None
    vals = (outer.reshape(T, -1) @ Amat.T).real
    return s1, s2, vals.sum(axis=0), (vals**2).sum(axis=0)


def mc_density(psi0, ops, dt, steps, n_traj, scheme="second", seed=0, observables=None, block=256, threads=1):
    """Monte Carlo estimate of ``E|psi><psi|`` after ``steps`` steps.

    Trajectories run in fixed-size blocks, each with its own child stream
    of ``SeedSequence(seed)``, and blocks are reduced in order, so results
    do not depend on ``threads``. ``stderr`` holds per-entry standard errors
    (real and imaginary parts in the matching components).
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if steps == 0:
        rho = np.outer(psi0, psi0.conj())
        z = np.zeros_like(rho)
        out = MCResult(rho, z, n_traj)
        if observables is not None:
            out.expectations = (observable_matrix(observables) @ rho.ravel()).real
            out.expectation_stderr = np.zeros(len(observables))
        return out
    stepper = SSEStepper(ops, dt, scheme)
    Amat = None
    if observables is not None:
        Amat = observable_matrix(observables)
    sizes = [block] * (n_traj // block) + ([n_traj % block] if n_traj % block else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    args = [(stepper, psi0, steps, T, ss, Amat) for T, ss in zip(sizes, seqs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda a: _run_block(*a), args))
    else:
        parts = [_run_block(*a) for a in args]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = n_traj
    mean = s1 / n
    var_re = np.maximum(s2.real / n - mean.real**2, 0.0) * n / (n - 1)
    var_im = np.maximum(s2.imag / n - mean.imag**2, 0.0) * n / (n - 1)
    se = np.sqrt(var_re / n) + 1j * np.sqrt(var_im / n)
    out = MCResult(mean, se, n)
    if Amat is not None:
        e1 = sum(p[2] for p in parts) / n
        e2 = sum(p[3] for p in parts) / n
        out.expectations = e1
        out.expectation_stderr = np.sqrt(np.maximum(e2 - e1**2, 0.0) * n / (n - 1) / n)
    return out


def _noise_support(scheme, dt, n_v, first_noise):
    """Yield ``(probability, dW, U)`` over the finite support of one step."""
    if scheme == "first":
        if first_noise == "two_point":
            pts = [(-np.sqrt(dt), 0.5), (np.sqrt(dt), 0.5)]
        elif first_noise == "gauss_hermite":
            # probabilists' Hermite nodes are exact for polynomials up to degree 5
            x, w = np.polynomial.hermite_e.hermegauss(3)
            w = w / w.sum()
            pts = list(zip(np.sqrt(dt) * x, w))
        else:
            raise ValueError(f"unknown first-order enumeration noise {first_noise!r}")
        for combo in itertools.product(pts, repeat=n_v):
            yield np.prod([c[1] for c in combo]), np.array([c[0] for c in combo]), None
        return
    three = [(-np.sqrt(3 * dt), 1 / 6), (0.0, 2 / 3), (np.sqrt(3 * dt), 1 / 6)]
    lo = np.tril_indices(n_v, k=-1)
    n_pairs = len(lo[0])
    idx = np.arange(n_v)
    for combo in itertools.product(three, repeat=n_v):
        p_w = np.prod([c[1] for c in combo])
        dW = np.array([c[0] for c in combo])
        for signs in itertools.product((-1.0, 1.0), repeat=n_pairs):
            U = np.zeros((n_v, n_v))
            U[lo[0], lo[1]] = np.array(signs) * dt
            U[lo[1], lo[0]] = -np.array(signs) * dt
            U[idx, idx] = -dt
            yield p_w * 0.5**n_pairs, dW, U


def enumerate_one_step(psi0, ops, dt, scheme="second", first_noise="gauss_hermite"):
    """Exact ``E|psi_1><psi_1|`` by summing over the discrete noise support."""
    n_v = len(ops.V)
    if n_v > MAX_ENUM_JUMPS:
        raise ValueError(f"noise support too large to enumerate: {n_v} jump operators > {MAX_ENUM_JUMPS}")
    psi0 = np.asarray(psi0, dtype=np.complex128)
    stepper = SSEStepper(ops, dt, scheme)
    probs, dWs, Us = [], [], []
    for p, dW, U in _noise_support(scheme, dt, n_v, first_noise):
        probs.append(p)
        dWs.append(dW)
        Us.append(U)
    T = len(probs)
    dW = np.array(dWs).reshape(T, n_v)
    U = None if scheme == "first" else np.array(Us).reshape(T, n_v, n_v)
    psi = stepper.step(np.repeat(psi0[None], T, axis=0), dW, U)
    return np.einsum("t,ta,tb->ab", np.array(probs), psi, psi.conj())
