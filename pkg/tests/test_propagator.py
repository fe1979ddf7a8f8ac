import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from lindlearn.model import LindbladOperators, ModelSpec, build_operators, random_true_model
from lindlearn.operators import PAULI, adjoint, all_up_state, min_eigenvalue_hermitian, pauli_string, random_density, random_hermitian
from lindlearn.propagator import (
    KrausMap,
    adjoint_kraus_list,
    apply,
    apply_adjoint,
    apply_kraus_list,
    ehrenfest_residual,
    evolve,
    evolve_expectations,
    spectral_radius,
    steps_per_interval,
    tp_defect,
    write_trajectory_csv,
)
from lindlearn.harness.verify import random_ops

VARIANTS = [(1, False), (2, False), (2, True)]


def lindblad_superop(ops):
    """Dense generator acting on row-major vec(rho)."""
    d = ops.dim
    eye = np.eye(d)

    def lr(A, B):  # vec(A X B) = (A kron B^T) vec(X)
        return np.kron(A, B.T)

    L = -1j * (lr(ops.H, eye) - lr(eye, ops.H))
    for v in ops.V:
        vv = adjoint(v) @ v
        L += lr(v, adjoint(v)) - 0.5 * (lr(vv, eye) + lr(eye, vv))
    return L


def ld_ops(n, seed=0):
    spec = ModelSpec("linear_dissipator", n)
    return build_operators(spec, random_true_model(seed, spec))


def dense_copy(ops):
    return LindbladOperators(H=ops.H, V=ops.V, n=ops.n)


@pytest.mark.parametrize("order,simplified", VARIANTS)
@pytest.mark.parametrize("family", ["linear_dissipator", "pauli_jump"])
def test_structured_map_equals_kraus_list(order, simplified, family, rng):
    spec = ModelSpec(family, 2)
    ops = build_operators(spec, random_true_model(1, spec))
    K = KrausMap(ops, order, 0.05, simplified)
    Kd = KrausMap(dense_copy(ops), order, 0.05, simplified)
    rho = random_density(4, rng)
    A = random_hermitian(4, rng)
    ref = apply_kraus_list(K.F, rho)
    assert np.allclose(K.apply_raw(rho), ref, atol=1e-14)
    assert np.allclose(Kd.apply_raw(rho), ref, atol=1e-14)
    assert np.allclose(K.adjoint_raw(A), adjoint_kraus_list(K.F, A), atol=1e-14)
    batch = np.stack([rho, A])
    assert np.allclose(K.apply_batch(batch), np.stack([K.apply_raw(rho), K.apply_raw(A)]), atol=1e-14)
    expected = 1 + len(ops.V) + (len(ops.V) ** 2 if order == 2 else 0)
    assert len(K.F) == expected


def test_first_order_formula(rng):
    """S (rho + dt sum V rho V^dag) S^dag with S = (I - dt G)^-1."""
    ops = random_ops(2, 2, rng)
    dt = 0.03
    S = np.linalg.inv(np.eye(4) - dt * ops.G)
    rho = random_density(4, rng)
    ref = S @ (rho + dt * sum(v @ rho @ adjoint(v) for v in ops.V)) @ adjoint(S)
    assert np.allclose(KrausMap(ops, 1, dt).apply_raw(rho), ref, atol=1e-14)


@pytest.mark.parametrize("order,simplified", VARIANTS)
def test_local_error_against_expm(order, simplified, rng):
    """One-step error vs exp(dt L) shrinks like dt^(order+1)."""
    ops = random_ops(2, 2, rng)
    Lsup = lindblad_superop(ops)
    rho = random_density(4, rng)
    errs = []
    for dt in (0.02, 0.01):
        exact = (scipy.linalg.expm(dt * Lsup) @ rho.ravel()).reshape(4, 4)
        errs.append(np.linalg.norm(KrausMap(ops, order, dt, simplified).apply_raw(rho) - exact))
    assert 2 ** (order + 1) * 0.8 < errs[0] / errs[1] < 2 ** (order + 1) * 1.25


def test_trivial_channels(rng):
    zero = LindbladOperators(H=np.zeros((4, 4)), V=[], n=2)
    for order in (1, 2):
        K = KrausMap(zero, order, 0.1)
        assert len(K.F) == 1 and np.allclose(K.F[0], np.eye(4))
        rho = random_density(4, rng)
        assert np.allclose(apply(K, rho), rho, atol=1e-15)
    unitary = LindbladOperators(H=random_hermitian(4, rng), V=[], n=2)
    K2 = KrausMap(unitary, 2, 0.01)
    assert np.allclose(adjoint(K2.F0) @ K2.F0, np.eye(4), atol=1e-12)
    assert np.allclose(apply(K2, np.eye(4) / 4), np.eye(4) / 4, atol=1e-15)
    K1 = KrausMap(unitary, 1, 0.01)
    assert spectral_radius(K1.F0) <= 1.0
    assert tp_defect(K1) <= 2 * 0.01**2 * np.linalg.norm(unitary.H, 2) ** 2


def test_unitary_heisenberg_matches_schrodinger(rng):
    ops = LindbladOperators(H=random_hermitian(4, rng), V=[], n=2)
    K = KrausMap(ops, 2, 0.05)
    rho = random_density(4, rng)
    A = random_hermitian(4, rng)
    r, B = rho, A
    for _ in range(7):
        r = apply(K, r)
        B = apply_adjoint(K, B)
    assert np.isclose(np.trace(A @ r), np.trace(B @ rho), atol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from(VARIANTS))
def test_adjoint_identity(seed, variant):
    rng = np.random.default_rng(seed)
    K = KrausMap(random_ops(2, 2, rng), variant[0], 0.04, variant[1])
    rho = random_density(4, rng)
    A = random_hermitian(4, rng)
    assert abs(np.trace(apply_adjoint(K, A) @ rho) - np.trace(A @ apply(K, rho))) < 1e-12


def test_identity_observable_adjoint():
    K = KrausMap(ld_ops(2), 2, 0.05)
    FdF = sum(adjoint(f) @ f for f in K.F)
    out = apply_adjoint(K, pauli_string([], [], 2))
    assert out.label == "K*(I)"
    assert np.allclose(out.op, FdF, atol=1e-14)
    assert np.linalg.norm(out.op - np.eye(4), 2) == pytest.approx(tp_defect(K), abs=1e-15)


@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from(VARIANTS))
def test_tp_defect_order(seed, n, variant):
    rng = np.random.default_rng(seed)
    ops = random_ops(n, 2, rng)
    order, simplified = variant
    ratio = tp_defect(KrausMap(ops, order, 0.01, simplified)) / tp_defect(KrausMap(ops, order, 0.005, simplified))
    target = 4 if order == 1 else 8
    assert 0.7 * target <= ratio <= 1.3 * target


@pytest.mark.parametrize("order,simplified", VARIANTS)
def test_positivity_long_run(order, simplified, rng):
    ops = random_ops(2, 3, rng)
    K = KrausMap(ops, order, 0.1, simplified)
    rho = random_density(4, rng, rank=1)
    for _ in range(300):
        rho = apply(K, rho)
        assert np.max(np.abs(rho - adjoint(rho))) <= 1e-12
        assert min_eigenvalue_hermitian(rho) >= -1e-10


def test_model_step_psd_and_trace(rng):
    K = KrausMap(ld_ops(3, seed=2), 2, 0.01)
    out = apply(K, random_density(8, rng))
    assert min_eigenvalue_hermitian(out) >= -1e-10
    # |tr K(rho) - 1| = |tr((sum F^dag F - I) rho)| is bounded by the TP defect
    assert abs(np.trace(out).real - 1) <= tp_defect(K)
    assert tp_defect(KrausMap(ld_ops(3, seed=2), 2, 1e-3)) <= 1e-6
    rho = all_up_state(3)
    for _ in range(100):
        rho = apply(K, rho)
    assert min_eigenvalue_hermitian(rho) >= -1e-10


@pytest.mark.parametrize("order,dt,tol", [(1, 1e-3, 2e-3), (2, 1e-2, 1e-3)])
def test_dephasing_decay(order, dt, tol):
    lam = 0.5
    ops = LindbladOperators(H=np.zeros((2, 2)), V=[np.sqrt(lam) * PAULI["z"]], n=1, jump_sites=[0], jump_local=[np.sqrt(lam) * PAULI["z"]])
    rho0 = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    X = pauli_string([0], ["x"], 1)
    L = steps_per_interval(1.0, dt)
    y = evolve_expectations(KrausMap(ops, order, dt), rho0, [X], 1, L)[0, 0]
    assert abs(y - np.exp(-1.0)) <= tol * np.exp(-1.0)


def test_second_order_beats_first_on_dephasing():
    lam = 0.5
    ops = LindbladOperators(H=np.zeros((2, 2)), V=[np.sqrt(lam) * PAULI["z"]], n=1)
    rho0 = np.full((2, 2), 0.5, dtype=complex)
    X = pauli_string([0], ["x"], 1)
    err = [abs(evolve_expectations(KrausMap(ops, o, 0.01), rho0, [X], 1, 100)[0, 0] - np.exp(-1)) for o in (1, 2)]
    assert err[1] < 1e-2 * err[0]


def test_simplified_close_to_full(rng):
    ops = random_ops(2, 2, rng)
    rho = random_density(4, rng)
    diffs = [np.linalg.norm(KrausMap(ops, 2, dt, True).apply_raw(rho) - KrausMap(ops, 2, dt).apply_raw(rho)) for dt in (1e-2, 5e-3)]
    assert 8 * 0.7 < diffs[0] / diffs[1] < 8 * 1.3


def test_measurement_grid_and_zero_model():
    assert steps_per_interval(0.1, 0.01) == 10
    with pytest.raises(ValueError):
        steps_per_interval(0.1, 0.03)
    zero = LindbladOperators(H=np.zeros((4, 4)), V=[], n=2)
    obs = [pauli_string([0], ["z"], 2), pauli_string([1], ["x"], 2)]
    y = evolve_expectations(KrausMap(zero, 2, 0.01), all_up_state(2), obs, 10, 10)
    assert np.all(y == y[:, :1])


def test_evolve_expectations_matches_loop(rng):
    ops = ld_ops(2, 3)
    K = KrausMap(ops, 2, 0.01)
    obs = [pauli_string([1], ["y"], 2), pauli_string([0, 1], ["x", "x"], 2)]
    y = evolve_expectations(K, all_up_state(2), obs, 4, 5, offset_steps=10)
    traj = evolve(K, all_up_state(2), 30, stride=5)
    for n in range(4):
        rho = traj.states[3 + n]
        assert traj.times[3 + n] == pytest.approx(0.01 * (15 + 5 * n))
        for k, A in enumerate(obs):
            assert y[k, n] == pytest.approx(np.trace(A.op @ rho).real, abs=1e-14)


def test_ehrenfest_examples():
    ops = LindbladOperators(H=PAULI["z"], V=[], n=1)
    traj = evolve(KrausMap(ops, 2, 0.01), np.full((2, 2), 0.5, dtype=complex), 50)
    assert ehrenfest_residual(ops, traj, PAULI["z"]) <= 1e-8
    lam = 0.4
    deph = LindbladOperators(H=np.zeros((2, 2)), V=[np.sqrt(lam) * PAULI["z"]], n=1)
    res = [ehrenfest_residual(deph, evolve(KrausMap(deph, 2, h), np.full((2, 2), 0.5, dtype=complex), int(0.5 / h)), PAULI["x"]) for h in (0.01, 0.005)]
    assert 3.2 < res[0] / res[1] < 4.8


def test_trajectory_csv(tmp_path):
    p = tmp_path / "traj.csv"
    write_trajectory_csv(p, np.array([0.0, 0.1]), ["Y2", "Z1"], np.array([[0.5, 1 / 3], [1.0, -0.25]]))
    assert p.read_text().splitlines() == ["t,observable,value", "0,Y2,0.5", "0,Z1,1", "0.1,Y2,0.333333333333333", "0.1,Z1,-0.25"]


def test_rejects_bad_inputs():
    ops = ld_ops(1)
    with pytest.raises(ValueError):
        KrausMap(ops, 3, 0.1)
    with pytest.raises(ValueError):
        KrausMap(ops, 1, 0.1, simplified=True)
    with pytest.raises(ValueError):
        apply(KrausMap(ops, 2, 0.1), np.eye(4))
