"""Levenberg-Marquardt with residual-norm damping.

Each iteration solves ``(nu I + J^T J) delta = -J^T R`` with
``nu = mu ||R||^2``. A step is accepted only if the objective decreases;
otherwise it is halved, up to ``max_halvings`` times. Near a zero-residual
solution ``nu`` vanishes quadratically and the iteration becomes
Gauss-Newton, which is where the quadratic rate comes from.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

NU_RULES = ("residual_norm_squared", "scaled")


@dataclass(frozen=True)
class LMOptions:
    max_iter: int = 100
    tol_grad: float = 1e-10
    tol_step: float = 1e-12
    nu_rule: str = "residual_norm_squared"
    mu: float = 1.0
    max_halvings: int = 20
    fd_check: bool = True
    fd_tol: float = 1e-4

    def __post_init__(self):
        if self.nu_rule not in NU_RULES:
            raise ValueError(f"unknown nu rule {self.nu_rule!r}")
        if not (self.tol_grad > 0 and self.tol_step > 0 and self.mu > 0 and self.fd_tol > 0):
            raise ValueError("tolerances and mu must be positive")
        if self.max_iter < 0 or self.max_halvings < 0:
            raise ValueError("iteration limits must be non-negative")

    @property
    def nu_scale(self):
        return 1.0 if self.nu_rule == "residual_norm_squared" else self.mu


@dataclass
class LMRecord:
    iter: int
    theta: np.ndarray
    phi: float
    res_norm: float
    nu: float
    step_norm: float
    accepted: bool
    rel_param_err: float | None


@dataclass
class LMHistory:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    stagnated: bool = False

    def accepted(self):
        return [r for r in self.records if r.accepted]

    def errors(self):
        return np.array([r.rel_param_err for r in self.accepted()], dtype=float)

    def phis(self):
        return np.array([r.phi for r in self.accepted()])

    def n_accepted_steps(self):
        return len(self.accepted()) - 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "phi", "res_norm", "nu", "step_norm", "accepted", "rel_param_err"])
            for r in self.records:
                err = "" if r.rel_param_err is None else f"{r.rel_param_err:.15g}"
                w.writerow([r.iter, f"{r.phi:.15g}", f"{r.res_norm:.15g}", f"{r.nu:.15g}", f"{r.step_norm:.15g}", int(r.accepted), err])


class FiniteDifferenceMismatch(ValueError):
    pass


def lm_step(theta, R, Rp, nu):
    """Solve ``(nu I + Rp^T Rp) delta = -Rp^T R`` by Cholesky."""
    Rp = np.asarray(Rp, dtype=float)
    R = np.asarray(R, dtype=float)
    if Rp.ndim != 2 or Rp.shape[0] != R.shape[0] or Rp.shape[1] != np.size(theta):
        raise ValueError(f"Jacobian shape {Rp.shape} does not match residuals {R.shape} and parameters {np.shape(theta)}")
    if nu < 0:
        raise ValueError("damping must be non-negative")
    A = Rp.T @ Rp + nu * np.eye(Rp.shape[1])
    g = Rp.T @ R
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g))):
        raise np.linalg.LinAlgError("non-finite entries in the LM system")
    try:
        c = scipy.linalg.cho_factor(A, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"LM system is not positive definite: {exc}") from exc
    return -scipy.linalg.cho_solve(c, g, check_finite=False)


def _phi(R):
    return float(R @ R) / (2 * len(R))


def check_jacobian(residuals, jacobian, theta, h=1e-6, n_dirs=2, seed=0):
    """Largest relative mismatch between ``J v`` and central differences along random ``v``."""
    rng = np.random.default_rng(seed)
    J = jacobian(theta)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.normal(size=len(theta))
        v /= np.linalg.norm(v)
        fd = (residuals(theta + h * v) - residuals(theta - h * v)) / (2 * h)
        an = J @ v
        worst = max(worst, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300))
    return worst, J


def lm_run(theta0, residuals, jacobian, opts=None, theta_true=None, log=None):
    """Minimize ``||R||^2 / (2 len R)``; returns ``(theta_hat, LMHistory)``."""
    opts = LMOptions() if opts is None else opts
    theta = np.array(theta0, dtype=float)
    hist = LMHistory()
    ref = None if theta_true is None else np.asarray(theta_true, dtype=float)

    def rel(th):
        return None if ref is None else float(np.linalg.norm(th - ref) / np.linalg.norm(ref))

    R = np.asarray(residuals(theta), dtype=float)
    phi = _phi(R)
    hist.records.append(LMRecord(0, theta.copy(), phi, float(np.linalg.norm(R)), 0.0, 0.0, True, rel(theta)))
    J = None
    if opts.fd_check:
        mismatch, J = check_jacobian(residuals, jacobian, theta)
        if mismatch > opts.fd_tol:
            raise FiniteDifferenceMismatch(f"Jacobian disagrees with finite differences at theta0 (relative {mismatch:.2e})")
    hist.stop_reason = "max_iter"
    for k in range(1, opts.max_iter + 1):
        if J is None:
            J = np.asarray(jacobian(theta), dtype=float)
            # jacobian callbacks may refresh residuals; keep R consistent with theta
        g = J.T @ R
        if np.max(np.abs(g)) <= opts.tol_grad:
            hist.stop_reason = "tol_grad"
            break
        nu = opts.nu_scale * float(R @ R)
        delta = lm_step(theta, R, J, nu)
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = theta + delta
            R_t = np.asarray(residuals(trial), dtype=float)
            phi_t = _phi(R_t)
            if np.isfinite(phi_t) and phi_t < phi:
                accepted = True
                break
            hist.records.append(LMRecord(k, trial, phi_t, float(np.linalg.norm(R_t)), nu, float(np.linalg.norm(delta)), False, rel(trial)))
            delta = 0.5 * delta
        if not accepted:
            hist.stagnated = True
            hist.stop_reason = "backtracking_exhausted"
            break
        if phi_t > phi:
            raise AssertionError("accepted step increased the objective")
        theta, R, phi = trial, R_t, phi_t
        step = float(np.linalg.norm(delta))
        hist.records.append(LMRecord(k, theta.copy(), phi, float(np.linalg.norm(R)), nu, step, True, rel(theta)))
        if log is not None:
            err = hist.records[-1].rel_param_err
            log(f"iter {k}: phi={phi:.3e} |R|={np.linalg.norm(R):.3e} nu={nu:.3e} step={step:.3e}" + ("" if err is None else f" err={err:.3e}"))
        J = None
        if step <= opts.tol_step:
            hist.stop_reason = "tol_step"
            break
    return theta, hist


@dataclass
class RateReport:
    order: float | None
    constant: float | None
    window: list
    plateau: float | None
    single_step: bool
    converging: bool
    final_error: float


def rate_diagnostics(history, floor=1e-10, max_pairs=4, contraction=0.5):
    """Fit ``log e_{k+1} = p log e_k + log C`` over the final converging window.

    A pair ``(e_k, e_{k+1})`` belongs to the window when both lie above
    ``floor`` and ``e_{k+1} <= contraction * e_k``. Runs that stop
    contracting report a plateau level instead of an order.
    """
    errs = history.errors() if isinstance(history, LMHistory) else np.asarray(history, dtype=float)
    if errs.size == 0 or np.any(~np.isfinite(errs)):
        raise ValueError("rate diagnostics need the relative parameter error of every iterate")
    if errs.size < 3:
        if errs.size == 2 and errs[1] <= floor:
            return RateReport(None, None, [], None, True, True, float(errs[-1]))
        raise ValueError("fewer than three iterates; no rate can be estimated")
    pairs = []
    k = len(errs) - 2
    # skip trailing iterates already at the floor
    while k >= 0 and errs[k + 1] <= floor:
        k -= 1
    while k >= 0 and len(pairs) < max_pairs and errs[k] > floor and errs[k + 1] > floor and errs[k + 1] <= contraction * errs[k]:
        pairs.append((k, float(errs[k]), float(errs[k + 1])))
        k -= 1
    pairs.reverse()
    final = float(errs[-1])
    at_floor = final <= floor
    if len(pairs) < 2:
        if at_floor and len(errs) <= 3:
            return RateReport(None, None, pairs, None, True, True, final)
        plateau = None if at_floor else float(np.median(errs[-3:]))
        return RateReport(None, None, pairs, plateau, False, at_floor, final)
    x = np.log([p[1] for p in pairs])
    y = np.log([p[2] for p in pairs])
    p, logc = np.polyfit(x, y, 1)
    return RateReport(float(p), float(np.exp(logc)), pairs, None, False, True, final)
