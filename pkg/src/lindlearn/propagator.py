"""Completely positive Kraus-form integrators for the Lindblad equation.

Both schemes share one structured form. With ``S = (I - b G)^{-1}``,
``P = I + a G`` and the dissipator ``D(X) = sum_j V_j X V_j^dag``::

    K(rho) = S [P rho P^dag + c1 D(P rho P^dag) + c2_in D(D(rho))] S^dag
             + c2_out D(D(rho))

* order 1 (semi-implicit Euler): ``b = dt``, ``a = 0``, ``c1 = dt``, no
  double-jump term. Kraus operators ``S`` and ``S V_j sqrt(dt)``.
* order 2 (implicit midpoint): ``a = b = dt/2``, ``c1 = dt`` and the
  double-jump weight ``dt**2/2`` sits inside ``S`` (``c2_in``) or, for the
  simplified variant, outside it (``c2_out``).

The structured form is what :func:`apply` evaluates; the explicit Kraus
list ``K.F`` is built on demand and sums to the same channel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as kern
from .operators import Observable, adjoint, expectation, hermitize, lu_factor, lu_solve


class Dissipator:
    """``D(X) = sum_j V_j X V_j^dag`` and its adjoint, local or dense."""

    def __init__(self, ops):
        self.n = ops.n
        self.n_jumps = len(ops.V)
        self.local = ops.is_local and self.n_jumps > 0
        if self.local:
            self.om = ops.site_superops()
            self.om_adj = ops.site_superops(adjoint_map=True)
            self.active = np.array([np.any(self.om[s] != 0) for s in range(self.n)])
        else:
            self.V = np.array(ops.V, dtype=np.complex128).reshape(self.n_jumps, ops.dim, ops.dim)
            self.Vh = np.conj(np.transpose(self.V, (0, 2, 1)))

    def __bool__(self):
        return self.n_jumps > 0

    def apply(self, X):
        return self.apply_batch(X[None])[0]

    def adjoint(self, X):
        return self.adjoint_batch(X[None])[0]

    def apply_batch(self, X):
        if not self.n_jumps:
            return np.zeros_like(X)
        if self.local:
            return kern.dissipate(np.ascontiguousarray(X), self.om, self.active, self.n)
        return np.einsum("jab,kbc,jcd->kad", self.V, X, self.Vh, optimize=True)

    def adjoint_batch(self, X):
        if not self.n_jumps:
            return np.zeros_like(X)
        if self.local:
            return kern.dissipate(np.ascontiguousarray(X), self.om_adj, self.active, self.n)
        return np.einsum("jab,kbc,jcd->kad", self.Vh, X, self.V, optimize=True)


@dataclass
class KrausMap:
    """One integrator step for fixed operators and step size.

    Holds the LU factorization of ``I - b G`` and its explicit inverse
    ``S``; a new map (new LU) is needed whenever the operators change.
    """

    ops: object
    order: int
    dt: float
    simplified: bool = False
    lu: object = field(init=False, repr=False)
    S: np.ndarray = field(init=False, repr=False)
    P: np.ndarray | None = field(init=False, repr=False)
    diss: Dissipator = field(init=False, repr=False)

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"integrator order must be 1 or 2, got {self.order}")
        if not self.dt > 0:
            raise ValueError(f"step size must be positive, got {self.dt}")
        if self.order == 1 and self.simplified:
            raise ValueError("the simplified variant exists only for order 2")
        d = self.ops.dim
        eye = np.eye(d, dtype=np.complex128)
        G = self.ops.G
        dt = self.dt
        if self.order == 1:
            self.a, self.b = 0.0, dt
            self.c1, self.c2_in, self.c2_out = dt, 0.0, 0.0
            self.P = None
        else:
            self.a = self.b = 0.5 * dt
            self.c1 = dt
            self.c2_in, self.c2_out = (0.0, 0.5 * dt * dt) if self.simplified else (0.5 * dt * dt, 0.0)
            self.P = eye + self.a * G
        self.R = eye - self.b * G
        self.lu = lu_factor(self.R)
        self.S = lu_solve(self.lu, eye)
        self.Sh = adjoint(self.S)
        self.Ph = None if self.P is None else adjoint(self.P)
        self.diss = Dissipator(self.ops)

    @property
    def dim(self):
        return self.ops.dim

    @property
    def F0(self):
        return self.S if self.P is None else self.S @ self.P

    @cached_property
    def F(self):
        """Explicit Kraus operators: ``F0``, one per jump, then double jumps."""
        dt = self.dt
        V = self.ops.V
        F = [self.F0]
        if self.order == 1:
            F += [np.sqrt(dt) * (self.S @ v) for v in V]
            return F
        F += [np.sqrt(dt) * (self.S @ v @ self.P) for v in V]
        for j2 in range(len(V)):
            for j1 in range(len(V)):
                vv = V[j1] @ V[j2] * (dt / np.sqrt(2.0))
                F.append(vv if self.simplified else self.S @ vv)
        return F

    def _rotate(self, rho):
        return rho if self.P is None else self.P @ rho @ self.Ph

    def apply_raw(self, rho):
        """Channel output without re-Hermitization."""
        X = self._rotate(rho)
        if not self.diss:
            return self.S @ X @ self.Sh
        Drho = self.diss.apply(rho) if (self.c2_in or self.c2_out) else None
        inner = self.c1 * X
        if self.c2_in:
            inner = inner + self.c2_in * Drho
        U = X + self.diss.apply(inner)
        out = self.S @ U @ self.Sh
        if self.c2_out:
            out = out + self.c2_out * self.diss.apply(Drho)
        return out

    def adjoint_raw(self, B):
        Y = self.Sh @ B @ self.S
        if self.diss:
            DY = self.diss.adjoint(Y)
            Yp = Y + self.c1 * DY
        else:
            DY = None
            Yp = Y
        out = Yp if self.P is None else self.Ph @ Yp @ self.P
        if not self.diss:
            return out
        if self.c2_in:
            out = out + self.c2_in * self.diss.adjoint(DY)
        if self.c2_out:
            out = out + self.c2_out * self.diss.adjoint(self.diss.adjoint(B))
        return out

    def apply_batch(self, rhos):
        """Channel on a stack of matrices (no Hermitization)."""
        X = rhos if self.P is None else self.P @ rhos @ self.Ph
        if not self.diss:
            return self.S @ X @ self.Sh
        need2 = self.c2_in or self.c2_out
        Drho = self.diss.apply_batch(rhos) if need2 else None
        inner = self.c1 * X
        if self.c2_in:
            inner = inner + self.c2_in * Drho
        out = self.S @ (X + self.diss.apply_batch(inner)) @ self.Sh
        if self.c2_out:
            out = out + self.c2_out * self.diss.apply_batch(Drho)
        return out


def kraus_first_order(ops, dt):
    return KrausMap(ops, order=1, dt=dt)


def kraus_second_order(ops, dt, simplified=False):
    return KrausMap(ops, order=2, dt=dt, simplified=simplified)


def make_kraus(ops, dt, order=2, simplified=False):
    return KrausMap(ops, order=order, dt=dt, simplified=simplified)


def apply(K, rho, renormalize=False):
    rho = np.asarray(rho)
    if rho.shape != (K.dim, K.dim):
        raise ValueError(f"dimension mismatch: map acts on {K.dim}x{K.dim}, state is {rho.shape}")
    out = hermitize(K.apply_raw(rho))
    if renormalize:
        out = out / np.trace(out).real
    return out


def apply_adjoint(K, A):
    op = A.op if isinstance(A, Observable) else np.asarray(A)
    if op.shape != (K.dim, K.dim):
        raise ValueError(f"dimension mismatch: map acts on {K.dim}x{K.dim}, observable is {op.shape}")
    out = hermitize(K.adjoint_raw(op))
    if isinstance(A, Observable):
        return Observable(op=out, label=f"K*({A.label})")
    return out


def apply_kraus_list(F, rho):
    """``sum_j F_j rho F_j^dag`` straight from a Kraus list."""
    F = np.asarray(F)
    return np.einsum("jab,bc,jdc->ad", F, rho, F.conj(), optimize=True)


def adjoint_kraus_list(F, A):
    F = np.asarray(F)
    return np.einsum("jba,bc,jcd->ad", F.conj(), A, F, optimize=True)


def tp_defect(K):
    """Spectral norm of ``sum_j F_j^dag F_j - I``."""
    eye = np.eye(K.dim, dtype=np.complex128)
    return float(np.linalg.norm(K.adjoint_raw(eye) - eye, ord=2))


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass
class Trajectory:
    times: np.ndarray
    states: list


def evolve(K, rho0, steps, stride=1, renormalize=False):
    """Apply ``K`` ``steps`` times, recording every ``stride``-th state."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rho = np.asarray(rho0, dtype=np.complex128)
    times, states = [0.0], [rho]
    for m in range(1, steps + 1):
        rho = apply(K, rho, renormalize=renormalize)
        if m % stride == 0:
            times.append(m * K.dt)
            states.append(rho)
    return Trajectory(np.array(times), states)


def observable_matrix(observables):
    """Rows ``vec(A^T)`` so that ``rows @ vec(rho)`` gives ``tr(A rho)``."""
    return np.array([(A.op if isinstance(A, Observable) else A).T.ravel() for A in observables])


def steps_per_interval(delta_t, dt):
    L = delta_t / dt
    Li = int(round(L))
    if Li < 1 or abs(L - Li) > 1e-9 * max(1.0, L):
        raise ValueError(f"measurement interval {delta_t} is not an integer multiple of dt={dt}")
    return Li


def evolve_expectations(K, rho0, observables, n_times, L, offset_steps=0, renormalize=False):
    """Expectations ``y[k, n-1] = tr(A_k rho_{offset + nL})`` for ``n = 1..n_times``."""
    if L < 1 or n_times < 1:
        raise ValueError("need L >= 1 and n_times >= 1")
    Amat = observable_matrix(observables)
    rho = np.asarray(rho0, dtype=np.complex128)
    y = np.empty((len(observables), n_times))
    total = offset_steps + L * n_times
    n = 0
    for m in range(1, total + 1):
        rho = apply(K, rho, renormalize=renormalize)
        if m > offset_steps and (m - offset_steps) % L == 0:
            y[:, n] = (Amat @ rho.ravel()).real
            n += 1
    return y


def lindblad_adjoint_action(ops, A):
    """Heisenberg generator ``i[H, A] + sum_j (V^dag A V - 1/2 {V^dag V, A})``."""
    out = 1j * (ops.H @ A - A @ ops.H)
    for v in ops.V:
        vh = adjoint(v)
        vv = vh @ v
        out += vh @ A @ v - 0.5 * (vv @ A + A @ vv)
    return out


def ehrenfest_residual(ops, traj, A):
    """Max over interior times of |centered d<A>/dt - <L^*(A)>|."""
    if len(traj.states) < 3:
        raise ValueError("need at least three recorded states")
    dts = np.diff(traj.times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("trajectory must be recorded at a uniform stride")
    h = dts[0]
    op = A.op if isinstance(A, Observable) else A
    LA = lindblad_adjoint_action(ops, op)
    y = np.array([expectation(op, r) for r in traj.states])
    worst = 0.0
    for m in range(1, len(y) - 1):
        lhs = (y[m + 1] - y[m - 1]) / (2 * h)
        rhs = float(np.sum(LA * traj.states[m].T).real)
        worst = max(worst, abs(lhs - rhs))
    return worst


def write_trajectory_csv(path, times, labels, values):
    """Long-format CSV ``t,observable,value`` (values[k, i] at times[i])."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "observable", "value"])
        for i, t in enumerate(times):
            for k, lab in enumerate(labels):
                w.writerow([f"{t:.15g}", lab, f"{values[k, i]:.15g}"])
