"""Residuals, objective, gradients and Jacobians of the discrete learning problem.

The simulated expectation ``y_kn = tr(A_k rho_{m_n})`` comes from iterating a
Kraus map ``K(theta)``; every derivative here is the exact derivative of that
discrete map, not of the continuous dynamics.

Three routes to derivatives share one description of ``dK`` (the tangent
of the structured map, see :mod:`lindlearn.propagator`):

* forward sensitivity: ``chi_{m+1} = K chi_m + (dK) rho_m`` for all
  parameters at once, giving the whole Jacobian in one pass;
* back-propagation: ``Lam_m = K^* Lam_{m+1} + sum_k r_kn A_k [m = m_n]``
  with ``dphi ~ sum_m <Lam_{m+1}, (dK) rho_m>``, one pass per gradient;
* adjoint Jacobian: the same pairing with ``Lam`` replaced by
  ``(K^*)^l A_k`` for every observable.

The pairing ``<B, (dK_alpha) rho>`` is evaluated for all ``alpha`` from two
cotangent matrices, ``C_G`` for ``dG`` and one reduced 2x2 block per jump
for ``dV``, so no per-parameter ``d x d`` products are formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .model import ModelSpec, ParameterVector, build_operators, derivative_tables
from .operators import Observable, adjoint, hermitize
from .propagator import KrausMap, observable_matrix, steps_per_interval


@dataclass(frozen=True)
class SimConfig:
    order: int = 2
    dt: float = 0.01
    simplified: bool = False

    def kraus(self, ops):
        return KrausMap(ops, order=self.order, dt=self.dt, simplified=self.simplified)


@dataclass
class MeasurementDataset:
    """Expectation time series ``values[k, n]`` at ``t_n = t_start + (n+1) delta_t``.

    ``n_shots == 0`` marks exact data; otherwise ``seed`` and ``noise``
    record how the values were sampled.
    """

    spec: ModelSpec
    observables: list
    delta_t: float
    values: np.ndarray
    rho0: np.ndarray
    t_start: float = 0.0
    n_shots: int = 0
    seed: int | None = None
    noise: str = "none"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.observables) or self.values.ndim != 2:
            raise ValueError(f"values must be (n_observables, n_times), got {self.values.shape}")
        if self.n_shots and self.seed is None:
            raise ValueError("sampled data must record its seed")
        for A, row in zip(self.observables, self.values):
            if isinstance(A, Observable) and not A.sites and A.label == "I":
                continue  # tr(rho): bounded only up to the trace drift of the integrator
            op = A.op if isinstance(A, Observable) else A
            bound = 1.0 if isinstance(A, Observable) and A.sites else float(np.max(np.abs(np.linalg.eigvalsh(op))))
            if np.max(np.abs(row)) > bound + 1e-8:
                raise ValueError(f"value outside the spectrum of observable {getattr(A, 'label', '?')}")

    @property
    def n_obs(self):
        return len(self.observables)

    @property
    def n_times(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.t_start + self.delta_t * np.arange(1, self.n_times + 1)


def measurement_steps(dataset, dt):
    """Step indices ``m_n`` at which the data are recorded."""
    L = steps_per_interval(dataset.delta_t, dt)
    offset = 0 if dataset.t_start == 0 else steps_per_interval(dataset.t_start, dt)
    return offset + L * np.arange(1, dataset.n_times + 1)


def _theta_values(theta, dataset):
    if isinstance(theta, ParameterVector):
        if theta.spec != dataset.spec:
            raise ValueError(f"parameter layout {theta.spec} does not match dataset model {dataset.spec}")
        return theta.values
    v = np.asarray(theta, dtype=float)
    if v.shape != (dataset.spec.n_params,):
        raise ValueError(f"expected {dataset.spec.n_params} parameters, got shape {v.shape}")
    return v


def simulate(theta, dataset, sim):
    """Simulated expectations (N_O, N_T) and the stored forward states."""
    th = _theta_values(theta, dataset)
    K = sim.kraus(build_operators(dataset.spec, th))
    steps = measurement_steps(dataset, sim.dt)
    Amat = observable_matrix(dataset.observables)
    rho = np.asarray(dataset.rho0, dtype=np.complex128)
    states = [rho]
    y = np.empty((dataset.n_obs, dataset.n_times))
    n = 0
    for m in range(1, steps[-1] + 1):
        rho = hermitize(K.apply_raw(rho))
        states.append(rho)
        if m == steps[n]:
            y[:, n] = (Amat @ rho.ravel()).real
            n += 1
    return y, states, K


def residuals(theta, dataset, sim):
    """Raw residuals ``r_kn = y_kn(theta) - y*_kn``, k-major."""
    y, _, _ = simulate(theta, dataset, sim)
    return (y - dataset.values).ravel()


def objective(theta, dataset, sim):
    r = residuals(theta, dataset, sim)
    return objective_from_residuals(r, dataset)


def objective_from_residuals(r, dataset):
    return float(r @ r) / (2 * dataset.n_obs * dataset.n_times)


# ---------------------------------------------------------------------------
# tangent of the structured map
# ---------------------------------------------------------------------------


def _plus_h(X):
    """``X + X^dag`` on a stack."""
    return X + np.conj(X.swapaxes(1, 2))


def _sandwich(A, X, B):
    """``A X B`` on a stack of square matrices."""
    n, d, _ = X.shape
    return ((A @ X).reshape(n * d, d) @ B).reshape(n, d, d)


class _Tangent:
    """Parameter derivatives of one Kraus map, in kernel-table form."""

    def __init__(self, K, spec, theta):
        self.K = K
        self.n = spec.n
        self.tab = derivative_tables(spec, theta)
        self.np = spec.n_params
        self.dis = self.tab.dis_params
        ops = K.ops
        self.jump_sites = ops.jump_sites
        self.jump_local = ops.jump_local
        # jump derivative entries grouped by jump: j -> [(alpha, dv)]
        self.by_jump = {}
        for alpha, j, dv in zip(self.tab.v_idx, self.tab.v_jump, self.tab.v_mats):
            self.by_jump.setdefault(int(j), []).append((int(alpha), dv))

    def dG_left(self, X):
        """Stack ``dG_alpha @ X`` over all parameters."""
        t = self.tab
        return kern.lmul_terms(np.ascontiguousarray(X), t.g_idx, t.g_coef, t.g_nf, t.g_sites, t.g_mats, self.np, self.n)

    def dD(self, X):
        """Stack ``dD_alpha(X)`` over dissipative parameters (rows follow ``dis``)."""
        t = self.tab
        return kern.super_terms(np.ascontiguousarray(X), t.dd_idx, t.dd_sites, t.dd_oms, len(self.dis), self.n)

    def step_terms(self, rho):
        K = self.K
        st = {"rho": rho}
        Z = rho if K.P is None else rho @ K.Ph
        X = Z if K.P is None else K.P @ Z
        st["Z"], st["X"] = Z, X
        need2 = K.c2_in or K.c2_out
        Drho = K.diss.apply(rho) if need2 else None
        st["Drho"] = Drho
        inner = K.c1 * X
        if K.c2_in:
            inner = inner + K.c2_in * Drho
        U = X + K.diss.apply(inner)
        st["Q"] = K.S @ U @ K.Sh @ adjoint(K.R)
        return st

    def forward(self, chi, st):
        """``K chi + (dK) rho`` for the stacked sensitivities ``chi`` (N_p, d, d)."""
        K = self.K
        D = K.diss.apply_batch
        dis = self.dis
        body = chi if K.P is None else _sandwich(K.P, chi, K.Ph)
        # dG_left is linear in its argument: one call covers both dG terms
        if K.a:
            gZ = self.dG_left(st["Z"])
            E = K.a * _plus_h(gZ)
            inner = K.c1 * (body + E)
            g = self.dG_left(K.a * st["Z"] + K.b * st["Q"])
        else:
            inner = K.c1 * body
            g = self.dG_left(K.b * st["Q"])
        body = body + _plus_h(g)
        need2 = K.c2_in or K.c2_out
        if need2:
            Dchi = D(chi)
            dDrho = self.dD(st["rho"])
        if K.c2_in:
            inner += K.c2_in * Dchi
            inner[dis] += K.c2_in * dDrho
        body += D(inner)
        src = K.c1 * self.dD(st["X"])
        if K.c2_in:
            src += K.c2_in * self.dD(st["Drho"])
        body[dis] += src
        out = _sandwich(K.S, body, K.Sh)
        if K.c2_out:
            out += K.c2_out * D(Dchi)
            out[dis] += K.c2_out * (self.dD(st["Drho"]) + D(dDrho))
        return 0.5 * _plus_h(out)

    def pairing(self, B, st, pre=None):
        """``<B, (dK_alpha) rho>`` for all parameters; ``B`` Hermitian."""
        K = self.K
        pre = self.cotangent_pre(B) if pre is None else pre
        Y, DY, W = pre["Y"], pre["DY"], pre["W"]
        CG = K.b * (st["Q"] @ Y)
        if K.a:
            CG = CG + K.a * (st["Z"] @ W)
        t = self.tab
        g = kern.trace_terms(np.ascontiguousarray(CG), t.g_idx, t.g_coef, t.g_nf, t.g_sites, t.g_mats, self.np, self.n)
        if self.by_jump:
            rho, X, Drho = st["rho"], st["X"], st["Drho"]
            left = K.c1 * X
            if K.c2_in:
                left = left + K.c2_in * Drho
            for j, entries in self.by_jump.items():
                s = self.jump_sites[j]
                vh = adjoint(self.jump_local[j])
                red = kern.reduced_product(left, kern.lmul_site(Y, vh, s, self.n), s, self.n)
                if K.c2_in:
                    red = red + K.c2_in * kern.reduced_product(rho, kern.lmul_site(DY, vh, s, self.n), s, self.n)
                if K.c2_out:
                    red = red + K.c2_out * (
                        kern.reduced_product(Drho, kern.lmul_site(B, vh, s, self.n), s, self.n)
                        + kern.reduced_product(rho, kern.lmul_site(pre["DB"], vh, s, self.n), s, self.n)
                    )
                for alpha, dv in entries:
                    g[alpha] += np.sum(dv * red.T)
        return 2.0 * g.real

    def cotangent_pre(self, B):
        K = self.K
        B = np.ascontiguousarray(B)
        Y = K.Sh @ B @ K.S
        DY = K.diss.adjoint(Y)
        pre = {"Y": Y, "DY": DY, "W": Y + K.c1 * DY}
        if K.c2_out:
            pre["DB"] = K.diss.adjoint(B)
        return pre


# ---------------------------------------------------------------------------
# gradients and Jacobians
# ---------------------------------------------------------------------------


def _setup(theta, dataset, sim):
    th = _theta_values(theta, dataset)
    ops = build_operators(dataset.spec, th)
    if not ops.is_local:
        raise ValueError("analytic derivatives need single-site jump operators")
    K = sim.kraus(ops)
    return th, K, _Tangent(K, dataset.spec, th)


def gradient_backprop(theta, dataset, sim, check_adjoint=True):
    """Gradient of the objective by one backward adjoint pass."""
    th = _theta_values(theta, dataset)
    y, states, _ = simulate(th, dataset, sim)
    _, K, tan = _setup(th, dataset, sim)
    r = y - dataset.values
    steps = measurement_steps(dataset, sim.dt)
    ops_k = np.array([(A.op if isinstance(A, Observable) else A) for A in dataset.observables])
    at = {int(m): n for n, m in enumerate(steps)}
    M = int(steps[-1])
    grad = np.zeros(tan.np)
    Lam = np.zeros_like(states[0])
    for m in range(M - 1, -1, -1):
        if m + 1 in at:
            Lam = Lam + np.einsum("k,kab->ab", r[:, at[m + 1]], ops_k)
        grad += tan.pairing(Lam, tan.step_terms(states[m]))
        Lam_next = hermitize(K.adjoint_raw(Lam))
        if check_adjoint and m == M - 1:
            lhs = np.sum(Lam_next * states[m].T).real
            rhs = np.sum(Lam * states[m + 1].T).real
            if abs(lhs - rhs) > 1e-12 * (1.0 + np.linalg.norm(Lam)):
                raise AssertionError(f"adjoint identity violated: {lhs!r} vs {rhs!r}")
        Lam = Lam_next
    return grad / (dataset.n_obs * dataset.n_times)


def residuals_and_jacobian_forward(theta, dataset, sim):
    """Residuals and Jacobian (N_O N_T, N_p) by forward sensitivity."""
    th, K, tan = _setup(theta, dataset, sim)
    steps = measurement_steps(dataset, sim.dt)
    Amat = observable_matrix(dataset.observables)
    d = K.dim
    rho = np.asarray(dataset.rho0, dtype=np.complex128)
    chi = np.zeros((tan.np, d, d), dtype=np.complex128)
    y = np.empty((dataset.n_obs, dataset.n_times))
    J = np.empty((dataset.n_obs, dataset.n_times, tan.np))
    n = 0
    for m in range(1, int(steps[-1]) + 1):
        st = tan.step_terms(rho)
        chi = tan.forward(chi, st)
        rho = hermitize(K.apply_raw(rho))
        if m == steps[n]:
            y[:, n] = (Amat @ rho.ravel()).real
            J[:, n, :] = (chi.reshape(tan.np, -1) @ Amat.T).real.T
            n += 1
    return (y - dataset.values).ravel(), J.reshape(dataset.n_obs * dataset.n_times, tan.np)


def jacobian_adjoint(theta, dataset, sim):
    """Jacobian from back-propagated observables ``(K^*)^l A_k``."""
    th = _theta_values(theta, dataset)
    _, states, _ = simulate(th, dataset, sim)
    _, K, tan = _setup(th, dataset, sim)
    steps = measurement_steps(dataset, sim.dt)
    M = int(steps[-1])
    terms = [tan.step_terms(states[m]) for m in range(M)]
    J = np.zeros((dataset.n_obs, dataset.n_times, tan.np))
    for k, A in enumerate(dataset.observables):
        B = np.asarray(A.op if isinstance(A, Observable) else A, dtype=np.complex128)
        back = []
        for _ in range(M):
            back.append(tan.cotangent_pre(B) | {"B": B})
            B = hermitize(K.adjoint_raw(B))
        for n, mn in enumerate(steps):
            acc = np.zeros(tan.np)
            for m in range(int(mn)):
                pre = back[int(mn) - m - 1]
                acc += tan.pairing(pre["B"], terms[m], pre)
            J[k, n] = acc
    return J.reshape(dataset.n_obs * dataset.n_times, tan.np)


JACOBIAN_METHODS = ("forward", "adjoint", "auto")


def jacobian_cost(dataset, sim, method):
    """Rough count of d x d matrix products for one Jacobian."""
    steps = measurement_steps(dataset, sim.dt)
    n_p = dataset.spec.n_params
    if method == "forward":
        return 5 * n_p * int(steps[-1])
    return dataset.n_obs * (4 * int(steps[-1]) + 2 * int(np.sum(steps)))


def jacobian(theta, dataset, sim, method="auto"):
    if method not in JACOBIAN_METHODS:
        raise ValueError(f"unknown Jacobian method {method!r}")
    if method == "auto":
        method = "forward" if jacobian_cost(dataset, sim, "forward") <= jacobian_cost(dataset, sim, "adjoint") else "adjoint"
    if method == "forward":
        return residuals_and_jacobian_forward(theta, dataset, sim)[1]
    return jacobian_adjoint(theta, dataset, sim)


class LearningProblem:
    """Residual/Jacobian callbacks for the optimizer, sharing forward passes."""

    def __init__(self, dataset, sim, method="auto"):
        self.dataset = dataset
        self.sim = sim
        self.method = method
        self._cache = None

    def residuals(self, theta):
        key = np.asarray(theta, dtype=float).tobytes()
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1].copy()
        return residuals(theta, self.dataset, self.sim)

    def jacobian(self, theta):
        th = np.asarray(theta, dtype=float)
        method = self.method
        if method == "auto":
            f = jacobian_cost(self.dataset, self.sim, "forward")
            a = jacobian_cost(self.dataset, self.sim, "adjoint")
            method = "forward" if f <= a else "adjoint"
        if method == "forward":
            r, J = residuals_and_jacobian_forward(th, self.dataset, self.sim)
            self._cache = (th.tobytes(), r)
            return J
        return jacobian_adjoint(th, self.dataset, self.sim)

    def objective(self, theta):
        return objective_from_residuals(self.residuals(theta), self.dataset)


# ---------------------------------------------------------------------------
# explicit Kraus-operator derivatives
# ---------------------------------------------------------------------------


def kraus_parameter_derivative(K, ops, d_ops, alpha=None):
    """Derivatives ``dF_j`` of ``K.F`` along ``d_ops = (dH, dV, dG)``.

    ``alpha`` is accepted for bookkeeping only; the direction is fully
    described by ``d_ops``. For the full second-order form the double-jump
    operators ``S V_j1 V_j2 dt/sqrt(2)`` pick up a ``dS`` term as well.
    """
    _, dV, dG = d_ops
    if len(dV) != len(ops.V) or dG.shape != (K.dim, K.dim):
        raise ValueError("derivative operators do not match the Kraus map")
    if ops is not K.ops and not np.allclose(ops.G, K.ops.G, atol=1e-14):
        raise ValueError("Kraus map and operators were built from different parameters")
    dt = K.dt
    V = ops.V
    S = K.S
    if K.order == 1:
        F0 = K.F0
        dF0 = dt * F0 @ dG @ F0
        return [dF0] + [np.sqrt(dt) * (dF0 @ v + F0 @ dv) for v, dv in zip(V, dV)]
    F0 = K.F0
    eye = np.eye(K.dim)
    dS_left = 0.5 * dt * S @ dG  # dS = dS_left @ S
    out = [dS_left @ (F0 + eye)]
    for j, (v, dv) in enumerate(zip(V, dV)):
        Fj = K.F[1 + j]
        out.append(dS_left @ Fj + np.sqrt(dt) * S @ dv @ K.P + 0.5 * dt**1.5 * S @ v @ dG)
    c = dt / np.sqrt(2.0)
    for j2 in range(len(V)):
        for j1 in range(len(V)):
            dvv = c * (dV[j1] @ V[j2] + V[j1] @ dV[j2])
            if K.simplified:
                out.append(dvv)
            else:
                out.append(dS_left @ (c * S @ V[j1] @ V[j2]) + S @ dvv)
    return out
