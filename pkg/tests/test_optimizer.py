import numpy as np
import pytest
from hypothesis import given, strategies as st

from lindlearn.optimizer import FiniteDifferenceMismatch, LMHistory, LMOptions, LMRecord, check_jacobian, lm_run, lm_step, rate_diagnostics


def rosenbrock(th):
    return np.array([10.0 * (th[1] - th[0] ** 2), 1.0 - th[0]])


def rosenbrock_jac(th):
    return np.array([[-20.0 * th[0], 10.0], [-1.0, 0.0]])


def test_scalar_step():
    assert lm_step(np.array([1.0]), np.array([1.0]), np.array([[1.0]]), 1.0) == pytest.approx([-0.5])


def test_linear_gauss_newton_exact(rng):
    A = rng.normal(size=(8, 3))
    ts = rng.normal(size=3)
    th = rng.normal(size=3)
    d = lm_step(th, A @ (th - ts), A, 0.0)
    assert np.max(np.abs(th + d - ts)) <= 1e-10


def test_large_damping_is_gradient_direction(rng):
    A = rng.normal(size=(8, 3))
    R = rng.normal(size=8)
    d = lm_step(np.zeros(3), R, A, 1e8)
    g = A.T @ R
    assert -d @ g / (np.linalg.norm(d) * np.linalg.norm(g)) > 0.9999


def test_step_shape_errors():
    with pytest.raises(ValueError):
        lm_step(np.zeros(2), np.zeros(3), np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        lm_step(np.zeros(2), np.zeros(3), np.zeros((3, 2)), -1.0)
    with pytest.raises(np.linalg.LinAlgError):
        lm_step(np.zeros(2), np.zeros(3), np.zeros((3, 2)), 0.0)


def test_rosenbrock_converges():
    th, hist = lm_run(np.array([-1.2, 1.0]), rosenbrock, rosenbrock_jac, LMOptions(max_iter=200), theta_true=np.ones(2))
    assert np.max(np.abs(th - 1.0)) <= 1e-8
    assert hist.stop_reason in ("tol_grad", "tol_step")
    phis = hist.phis()
    assert np.all(np.diff(phis) < 0)


def test_linear_problem(rng):
    A = rng.normal(size=(10, 4))
    ts = rng.normal(size=4)
    th, hist = lm_run(np.zeros(4), lambda t: A @ (t - ts), lambda t: A, theta_true=ts)
    assert np.allclose(th, ts, atol=1e-10)
    # an exact Gauss-Newton step is reported as single-step convergence, not as an order
    rep = rate_diagnostics(_hist([0.3, 0.0]))
    assert rep.single_step and rep.order is None and rep.converging


@given(st.integers(0, 10_000))
def test_accepted_steps_monotone(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)

    def res(t):
        return np.array([np.sin(t[0]) - c[0], t[0] * t[1] - c[1], t[1] ** 3 + t[0] - c[2], 0.1 * t[0]])

    def jac(t):
        return np.array([[np.cos(t[0]), 0.0], [t[1], t[0]], [1.0, 3 * t[1] ** 2], [0.1, 0.0]])

    _, hist = lm_run(rng.normal(size=2), res, jac, LMOptions(max_iter=30))
    phis = hist.phis()
    assert np.all(np.diff(phis) <= 0)
    assert all(r.phi >= phis[np.searchsorted(-phis, -r.phi)] for r in hist.records)


def test_fd_mismatch_detected():
    bad = lambda t: 2.0 * rosenbrock_jac(t)  # noqa: E731
    with pytest.raises(FiniteDifferenceMismatch):
        lm_run(np.array([-1.2, 1.0]), rosenbrock, bad)
    worst, _ = check_jacobian(rosenbrock, rosenbrock_jac, np.array([0.3, 0.2]))
    assert worst < 1e-8


def test_backtracking_exhaustion_flags_stagnation():
    # Jacobian sign flipped: every step goes uphill
    th, hist = lm_run(np.array([0.5]), lambda t: t**2 + 1, lambda t: -np.array([[2 * t[0]]]), LMOptions(fd_check=False, max_halvings=3))
    assert hist.stagnated and hist.stop_reason == "backtracking_exhausted"
    assert th == pytest.approx([0.5])


def test_options_validation():
    with pytest.raises(ValueError):
        LMOptions(nu_rule="other")
    with pytest.raises(ValueError):
        LMOptions(tol_grad=0.0)
    assert LMOptions(nu_rule="scaled", mu=3.0).nu_scale == 3.0


def _hist(errs):
    return LMHistory([LMRecord(i, np.zeros(1), 1.0, 1.0, 0.0, 0.0, True, e) for i, e in enumerate(errs)])


def test_rate_quadratic_window():
    errs = [5e-2]
    for _ in range(4):
        errs.append(3.0 * errs[-1] ** 2)
    errs += [1e-15, 1e-15]
    rep = rate_diagnostics(_hist(errs))
    assert rep.order == pytest.approx(2.0, abs=1e-9)
    assert rep.constant == pytest.approx(3.0, rel=1e-9)


def test_rate_linear_and_plateau():
    rep = rate_diagnostics(_hist([0.1 * 0.3**k for k in range(8)]))
    assert rep.order == pytest.approx(1.0, abs=1e-9)
    rep = rate_diagnostics(_hist([0.1, 0.05, 0.02, 0.0101, 0.01, 0.0099, 0.01]))
    assert rep.order is None and rep.plateau == pytest.approx(0.01) and not rep.converging
    with pytest.raises(ValueError):
        rate_diagnostics(_hist([0.1]))


def test_history_csv(tmp_path):
    _, hist = lm_run(np.array([-1.2, 1.0]), rosenbrock, rosenbrock_jac, theta_true=np.ones(2))
    p = tmp_path / "h.csv"
    hist.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,phi,res_norm,nu,step_norm,accepted,rel_param_err"
    assert len(lines) == len(hist.records) + 1
    assert lines[1].startswith("0,") and lines[1].split(",")[5] == "1"
