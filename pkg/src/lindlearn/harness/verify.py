"""Numerical self-checks bundled behind ``lindlearn verify``.

Every check is deterministic (fixed seeds) and returns a :class:`Check`
with the measured value and its accepted interval. The report CSV holds
no timings, so two runs produce identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..learning import MeasurementDataset, SimConfig, gradient_backprop, objective, residuals, residuals_and_jacobian_forward, simulate
from ..model import LindbladOperators, ModelSpec, build_operators, random_true_model
from ..operators import all_up_state, min_eigenvalue_hermitian, observable_basis, pauli_string, random_density, random_hermitian
from ..propagator import KrausMap, apply, apply_adjoint, ehrenfest_residual, evolve, evolve_expectations, steps_per_interval, tp_defect
from ..unraveling import enumerate_one_step
from .data import sample_shots


@dataclass
class Check:
    name: str
    value: float
    low: float
    high: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.low <= self.value <= self.high)


def random_ops(n, n_jumps, rng, scale=1.0):
    """Random dense Lindblad operators (jumps need not be local)."""
    d = 2**n
    H = random_hermitian(d, rng, scale=0.5 * scale)
    V = [scale * 0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(d) for _ in range(n_jumps)]
    return LindbladOperators(H=H, V=V, n=n)


def order_errors(order, dts=(0.04, 0.02, 0.01), dt_ref=1e-4, t_final=1.0, n=2, seed=1, family="linear_dissipator"):
    """Max-over-time expectation error of each ``dt`` against an order-2 ``dt_ref`` run."""
    spec = ModelSpec(family, n)
    ops = build_operators(spec, random_true_model(seed, spec))
    obs = observable_basis("one_local", n)
    rho0 = all_up_state(n)
    grid = max(dts)
    n_t = int(round(t_final / grid))
    ref = evolve_expectations(KrausMap(ops, 2, dt_ref), rho0, obs, n_t, steps_per_interval(grid, dt_ref))
    errs = []
    for dt in dts:
        y = evolve_expectations(KrausMap(ops, order, dt), rho0, obs, n_t, steps_per_interval(grid, dt))
        errs.append(float(np.max(np.abs(y - ref))))
    return np.array(errs)


def tp_defect_ratio(order, dt=0.02, n=2, seed=0):
    rng = np.random.default_rng(seed)
    ops = random_ops(n, 2, rng)
    return tp_defect(KrausMap(ops, order, dt)) / tp_defect(KrausMap(ops, order, dt / 2))


def cp_min_eigenvalue(order, steps=1000, dt=0.05, n=2, seed=1):
    rng = np.random.default_rng(seed)
    ops = random_ops(n, 3, rng)
    K = KrausMap(ops, order, dt)
    rho = random_density(2**n, rng)
    worst = np.inf
    for _ in range(steps):
        rho = apply(K, rho)
        worst = min(worst, min_eigenvalue_hermitian(rho / np.trace(rho).real))
    return worst


def sse_enumeration_error(scheme, n=2, n_jumps=3, dt=0.05, seed=2):
    rng = np.random.default_rng(seed)
    ops = random_ops(n, n_jumps, rng)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    psi /= np.linalg.norm(psi)
    K = KrausMap(ops, 1 if scheme == "first" else 2, dt)
    return float(np.max(np.abs(enumerate_one_step(psi, ops, dt, scheme) - K.apply_raw(np.outer(psi, psi.conj())))))


def adjoint_identity_error(n=3, seed=4):
    rng = np.random.default_rng(seed)
    ops = build_operators(ModelSpec("pauli_jump", n), random_true_model(seed, ModelSpec("pauli_jump", n)))
    worst = 0.0
    for order in (1, 2):
        K = KrausMap(ops, order, 0.05)
        rho = random_density(2**n, rng)
        A = random_hermitian(2**n, rng)
        lhs = np.sum(apply_adjoint(K, A) * rho.T)
        rhs = np.sum(A * apply(K, rho).T)
        worst = max(worst, abs(lhs - rhs))
    return worst


def small_dataset(family, n=2, seed=5, noise=0.05, kind="one_local", n_times=3, sim=None):
    """Dataset whose values are a perturbed simulation, so residuals are nonzero."""
    spec = ModelSpec(family, n)
    theta = random_true_model(seed, spec).values
    obs = observable_basis(kind, n)
    sim = SimConfig(2, 0.05) if sim is None else sim
    ds = MeasurementDataset(spec, obs, 0.1, np.zeros((len(obs), n_times)), all_up_state(n))
    y, _, _ = simulate(theta, ds, sim)
    rng = np.random.default_rng(seed)
    ds.values = np.clip(y + noise * rng.normal(size=y.shape), -1, 1)
    ds.values[0] = y[0]
    return theta, ds, sim


def gradient_fd_error(family, h=1e-5):
    theta, ds, sim = small_dataset(family)
    g = gradient_backprop(theta, ds, sim)
    fd = np.array([(objective(theta + h * e, ds, sim) - objective(theta - h * e, ds, sim)) / (2 * h) for e in np.eye(len(theta))])
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def jacobian_fd_error(family, h=1e-5):
    theta, ds, sim = small_dataset(family)
    _, J = residuals_and_jacobian_forward(theta, ds, sim)
    fd = np.stack([(residuals(theta + h * e, ds, sim) - residuals(theta - h * e, ds, sim)) / (2 * h) for e in np.eye(len(theta))], axis=1)
    return float(np.linalg.norm(J - fd) / np.linalg.norm(fd))


def ehrenfest_ratio(dt=2e-3, n=3, seed=7, t_final=0.4):
    """residual(dt) / residual(dt/2) on the linear-dissipator model with A = Y2."""
    spec = ModelSpec("linear_dissipator", n)
    ops = build_operators(spec, random_true_model(seed, spec))
    A = pauli_string([1], ["y"], n)
    res = []
    for h in (dt, dt / 2):
        traj = evolve(KrausMap(ops, 2, h), all_up_state(n), int(round(t_final / h)))
        res.append(ehrenfest_residual(ops, traj, A))
    return res[0] / res[1], res


def shot_noise_slope(shots=(100, 10_000, 1_000_000), reps=200, seed=9):
    """Log-log slope of the RMS sampling error of the data against N_S."""
    spec = ModelSpec("linear_dissipator", 2)
    theta = random_true_model(seed, spec).values
    obs = observable_basis("one_local", 2)
    K = KrausMap(build_operators(spec, theta), 2, 0.01)
    y = evolve_expectations(K, all_up_state(2), obs, 10, 10)
    rng = np.random.default_rng(seed)
    rms = []
    for ns in shots:
        sq = [np.mean((sample_shots(y, obs, ns, "bernoulli", rng)[1:] - y[1:]) ** 2) for _ in range(reps)]
        rms.append(np.sqrt(np.mean(sq)))
    slope = np.polyfit(np.log(shots), np.log(rms), 1)[0]
    return float(slope)


def verify_suite(scope="quick"):
    """Run the checks; ``scope`` is ``quick`` or ``full`` (adds 3-qubit and order-1 variants)."""
    if scope not in ("quick", "full"):
        raise ValueError(f"unknown verify scope {scope!r}")
    checks = []
    e2 = order_errors(2)
    e1 = order_errors(1)
    for i in range(2):
        checks.append(Check(f"order2_ratio_{i}", e2[i] / e2[i + 1], 3.2, 4.8))
        checks.append(Check(f"order1_ratio_{i}", e1[i] / e1[i + 1], 1.7, 2.4))
    checks.append(Check("tp_defect_ratio_order1", tp_defect_ratio(1), 4 * 0.7, 4 * 1.3))
    checks.append(Check("tp_defect_ratio_order2", tp_defect_ratio(2), 8 * 0.7, 8 * 1.3))
    for order in (1, 2):
        checks.append(Check(f"cp_min_eigenvalue_order{order}", cp_min_eigenvalue(order), -1e-10, np.inf))
    checks.append(Check("sse_enumeration_second", sse_enumeration_error("second"), 0.0, 1e-12))
    checks.append(Check("sse_enumeration_first", sse_enumeration_error("first"), 0.0, 1e-10))
    checks.append(Check("adjoint_identity", adjoint_identity_error(), 0.0, 1e-12))
    for fam in ("linear_dissipator", "pauli_jump"):
        checks.append(Check(f"gradient_fd_{fam}", gradient_fd_error(fam), 0.0, 1e-6))
        checks.append(Check(f"jacobian_fd_{fam}", jacobian_fd_error(fam), 0.0, 1e-6))
    ratio, _ = ehrenfest_ratio()
    checks.append(Check("ehrenfest_ratio", ratio, 3.2, 4.8))
    checks.append(Check("shot_noise_slope", shot_noise_slope(), -0.65, -0.35))
    if scope == "full":
        checks.append(Check("tp_defect_ratio_order2_3q", tp_defect_ratio(2, n=3, seed=5), 8 * 0.7, 8 * 1.3))
        checks.append(Check("sse_enumeration_second_1q", sse_enumeration_error("second", n=1, n_jumps=2), 0.0, 1e-12))
        e2p = order_errors(2, family="pauli_jump")
        checks.append(Check("order2_ratio_pauli_jump", e2p[1] / e2p[2], 3.2, 4.8))
    return checks


def write_report(checks, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "value", "low", "high", "passed"])
        for c in checks:
            w.writerow([c.name, f"{c.value:.6e}", f"{c.low:.6g}", f"{c.high:.6g}", int(c.passed)])
