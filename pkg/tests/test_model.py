import numpy as np
import pytest
from hypothesis import given, strategies as st

from lindlearn.model import (
    ModelSpec,
    ParameterVector,
    build_hamiltonian,
    build_operators,
    derivative_tables,
    operator_derivative,
    random_true_model,
)
from lindlearn.operators import PAULI, SIGMA_MINUS, adjoint, embed_local, random_density

FAMILIES = ["linear_dissipator", "pauli_jump"]


def test_parameter_counts():
    assert ModelSpec("linear_dissipator", 6).n_params == 65
    assert ModelSpec("linear_dissipator", 6).n_hamiltonian == 63
    assert ModelSpec("pauli_jump", 6).n_params == 93
    for n in range(1, 7):
        assert ModelSpec("pauli_jump", n).n_params == 12 * n - 9 + 5 * n
        assert ModelSpec("pauli_jump", n).n_jumps == n
        assert ModelSpec("linear_dissipator", n).n_jumps == 2 * n


def test_gauge_slot_absent():
    names = ModelSpec("pauli_jump", 3).names
    assert not any(nm.startswith("d2_") and nm.endswith("_x") for nm in names)
    assert sum(nm.startswith("d2_") for nm in names) == 6


@pytest.mark.parametrize("family", FAMILIES)
def test_pack_unpack_json(family):
    spec = ModelSpec(family, 3)
    p = random_true_model(4, spec)
    assert np.array_equal(ParameterVector.pack(p.unpack(), spec).values, p.values)
    q = ParameterVector.from_json(p.to_json())
    assert q.spec == spec and np.array_equal(q.values, p.values)


def test_hamiltonian_examples():
    assert not np.any(build_hamiltonian(np.zeros(63), 6))
    e = np.zeros(3)
    e[2] = 1.0
    assert np.array_equal(build_hamiltonian(e, 1), PAULI["z"])


def test_jump_examples():
    spec = ModelSpec("linear_dissipator", 2)
    ops = build_operators(spec, np.zeros(spec.n_params))
    assert all(not np.any(v) for v in ops.V)
    assert np.allclose(ops.G, -1j * ops.H)
    spec = ModelSpec("pauli_jump", 1)
    th = np.zeros(spec.n_params)
    th[3] = 1.0  # d1_1_x
    assert np.array_equal(build_operators(spec, th).V[0], PAULI["x"])
    ld = ModelSpec("linear_dissipator", 1)
    th = np.zeros(ld.n_params)
    th[3:] = [0.7, 0.4]
    ops = build_operators(ld, th)
    assert np.allclose(ops.V[0], 0.7 * SIGMA_MINUS)
    assert np.allclose(ops.V[1], 0.4 * PAULI["z"])


def test_dephasing_rate():
    # V = sqrt(lam) sigma^z: d<sigma^x>/dt = -2 lam <sigma^x>
    lam = 0.3
    V = np.sqrt(lam) * PAULI["z"]
    rho = np.array([[0.5, 0.2 + 0.1j], [0.2 - 0.1j, 0.5]])
    T = V @ rho @ adjoint(V) - 0.5 * (adjoint(V) @ V @ rho + rho @ adjoint(V) @ V)
    assert np.isclose(np.trace(PAULI["x"] @ T).real, -2 * lam * np.trace(PAULI["x"] @ rho).real)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("mode", ["amplitude", "strength"])
def test_operator_invariants(family, mode, rng):
    spec = ModelSpec(family, 3, mode)
    ops = build_operators(spec, random_true_model(2, spec))
    assert np.max(np.abs(ops.H - adjoint(ops.H))) <= 1e-12
    G = -1j * ops.H - 0.5 * sum(adjoint(v) @ v for v in ops.V)
    assert np.max(np.abs(ops.G - G)) <= 1e-12
    for _ in range(5):
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        assert np.vdot(psi, ops.G @ psi).real <= 1e-12


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("mode", ["amplitude", "strength"])
def test_operator_derivative_fd(family, mode):
    spec = ModelSpec(family, 2, mode)
    th = random_true_model(8, spec).values
    h = 1e-5
    for alpha in range(spec.n_params):
        dH, dV, dG = operator_derivative(spec, th, alpha)
        e = np.zeros_like(th)
        e[alpha] = h
        p, m = build_operators(spec, th + e), build_operators(spec, th - e)
        # sqrt(lambda) in strength mode has large third derivatives near 0
        tol = 1e-6 if mode == "strength" else 1e-8
        assert np.max(np.abs(dG - (p.G - m.G) / (2 * h))) < tol
        assert np.max(np.abs(dH - (p.H - m.H) / (2 * h))) < tol
        for j in range(spec.n_jumps):
            assert np.max(np.abs(dV[j] - (p.V[j] - m.V[j]) / (2 * h))) < tol


def test_derivative_examples():
    spec = ModelSpec("pauli_jump", 2)
    th = random_true_model(1, spec).values
    dH, dV, _ = operator_derivative(spec, th, 0)
    assert np.array_equal(dH, embed_local(PAULI["x"], 0, 2)) and not any(np.any(v) for v in dV)
    alpha = spec.names.index("d2_2_z")
    dH, dV, _ = operator_derivative(spec, th, alpha)
    assert not np.any(dH)
    assert np.array_equal(dV[1], 1j * embed_local(PAULI["z"], 1, 2)) and not np.any(dV[0])


@pytest.mark.parametrize("family", FAMILIES)
def test_derivative_tables_match_dense(family, rng):
    """The flat term tables reproduce dG and dD of the dense derivative."""
    spec = ModelSpec(family, 3)
    th = random_true_model(3, spec).values
    t = derivative_tables(spec, th)
    X = random_density(8, rng)
    for alpha in range(spec.n_params):
        _, dV, dG = operator_derivative(spec, th, alpha)
        G_tab = np.zeros((8, 8), dtype=complex)
        for k in np.nonzero(t.g_idx == alpha)[0]:
            f = embed_local(t.g_mats[k, 0], t.g_sites[k, 0], 3)
            if t.g_nf[k] == 2:
                f = f @ embed_local(t.g_mats[k, 1], t.g_sites[k, 1], 3)
            G_tab += t.g_coef[k] * f
        assert np.allclose(G_tab, dG, atol=1e-13)
        V = build_operators(spec, th).V
        dD = sum(dv @ X @ adjoint(v) + v @ X @ adjoint(dv) for v, dv in zip(V, dV))
        dD_tab = np.zeros((8, 8), dtype=complex)
        if alpha in t.dis_params:
            k = list(t.dis_params).index(alpha)
            for i in np.nonzero(t.dd_idx == k)[0]:
                s = t.dd_sites[i]
                X6 = X.reshape(2**s, 2, 2 ** (2 - s), 2**s, 2, 2 ** (2 - s))
                dD_tab += np.einsum("abxy,ixjlym->iajlbm", t.dd_oms[i], X6).reshape(8, 8)
        assert np.allclose(dD_tab, dD, atol=1e-13)


@given(st.integers(0, 2**31 - 1), st.sampled_from(FAMILIES))
def test_random_model_deterministic(seed, family):
    spec = ModelSpec(family, 2)
    assert np.array_equal(random_true_model(seed, spec).values, random_true_model(seed, spec).values)


def test_gauge_phase_invariance(rng):
    """A global phase on a jump leaves the generator action unchanged."""
    spec = ModelSpec("pauli_jump", 2)
    ops = build_operators(spec, random_true_model(0, spec))
    rho = random_density(4, rng)

    def lind(V):
        out = -1j * (ops.H @ rho - rho @ ops.H)
        for v in V:
            out += v @ rho @ adjoint(v) - 0.5 * (adjoint(v) @ v @ rho + rho @ adjoint(v) @ v)
        return out

    assert np.allclose(lind(ops.V), lind([np.exp(0.7j) * v for v in ops.V]), atol=1e-13)
