"""Dense qubit operators: Pauli strings, observables, LU solves, PSD checks."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

PAULI = {
    "i": np.eye(2, dtype=np.complex128),
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
AXES = ("x", "y", "z")
# sigma^- = (sigma^x - i sigma^y) / 2 maps |0> (sigma^z = +1) to |1>
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
SIGMA_PLUS = SIGMA_MINUS.conj().T


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when an LU pivot falls below the singularity threshold."""

    def __init__(self, pivot_index, pivot_value, threshold):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        self.threshold = threshold
        super().__init__(f"matrix is singular to working precision: |U[{pivot_index},{pivot_index}]| = {pivot_value:.3e} <= {threshold:.3e}")


def adjoint(M):
    return np.conj(M).T


def is_hermitian(M, atol=1e-12):
    return np.max(np.abs(M - adjoint(M)), initial=0.0) <= atol


def hermitize(M):
    return 0.5 * (M + adjoint(M))


def embed_local(op, site, n):
    """Return ``I^{(x)site} (x) op (x) I^{(x)(n-site-1)}``."""
    if not 0 <= site < n:
        raise ValueError(f"site {site} out of range for {n} qubits")
    op = np.asarray(op, dtype=np.complex128)
    if op.shape != (2, 2):
        raise ValueError("embed_local expects a 2x2 operator")
    left = np.eye(2**site, dtype=np.complex128)
    right = np.eye(2 ** (n - site - 1), dtype=np.complex128)
    return np.kron(np.kron(left, op), right)


@dataclass(frozen=True)
class Observable:
    """Hermitian observable, usually a Pauli string.

    ``sites``/``axes`` are empty for non-Pauli observables. Labels print
    sites 1-based (``"Y2"`` is sigma^y on the second qubit).
    """

    op: np.ndarray = field(repr=False)
    label: str
    sites: tuple = ()
    axes: tuple = ()

    @property
    def dim(self):
        return self.op.shape[0]


def pauli_label(sites, axes):
    if not sites:
        return "I"
    return "".join(f"{a.upper()}{s + 1}" for s, a in sorted(zip(sites, axes)))


def parse_pauli_label(label):
    """Inverse of :func:`pauli_label`; returns 0-based ``(sites, axes)``."""
    if label == "I":
        return (), ()
    sites, axes = [], []
    i = 0
    while i < len(label):
        a = label[i].lower()
        if a not in AXES:
            raise ValueError(f"bad Pauli label {label!r}")
        j = i + 1
        while j < len(label) and label[j].isdigit():
            j += 1
        if j == i + 1:
            raise ValueError(f"bad Pauli label {label!r}")
        sites.append(int(label[i + 1 : j]) - 1)
        axes.append(a)
        i = j
    return tuple(sites), tuple(axes)


def pauli_string(sites, axes, n):
    sites = tuple(int(s) for s in sites)
    axes = tuple(str(a).lower() for a in axes)
    if len(sites) != len(axes):
        raise ValueError("sites and axes must have the same length")
    if len(set(sites)) != len(sites):
        raise ValueError(f"duplicate sites in Pauli string: {sites}")
    for a in axes:
        if a not in AXES:
            raise ValueError(f"unknown Pauli axis {a!r}")
    for s in sites:
        if not 0 <= s < n:
            raise ValueError(f"site {s} out of range for {n} qubits")
    order = sorted(range(len(sites)), key=lambda i: sites[i])
    sites = tuple(sites[i] for i in order)
    axes = tuple(axes[i] for i in order)
    factors = ["i"] * n
    for s, a in zip(sites, axes):
        factors[s] = a
    op = np.ones((1, 1), dtype=np.complex128)
    for f in factors:
        op = np.kron(op, PAULI[f])
    return Observable(op=op, label=pauli_label(sites, axes), sites=sites, axes=axes)


def observable_basis(kind, n):
    """Observable sets used for learning.

    ``one_local``: identity and every single-site Pauli (3n + 1).
    ``two_local``: ``one_local`` plus every two-site product on distinct
    pairs (1 + 3n + 9 n(n-1)/2). ``xy_one_local``: sigma^x and sigma^y on
    every site (2n), no identity.
    """
    if n < 1:
        raise ValueError("need at least one qubit")
    obs = []
    if kind in ("one_local", "two_local"):
        obs.append(pauli_string([], [], n))
        for s in range(n):
            for a in AXES:
                obs.append(pauli_string([s], [a], n))
        if kind == "two_local":
            for s1, s2 in itertools.combinations(range(n), 2):
                for a1 in AXES:
                    for a2 in AXES:
                        obs.append(pauli_string([s1, s2], [a1, a2], n))
    elif kind == "xy_one_local":
        for s in range(n):
            for a in ("x", "y"):
                obs.append(pauli_string([s], [a], n))
    else:
        raise ValueError(f"unknown observable basis {kind!r}")
    return obs


def observables_from_labels(labels, n):
    return [pauli_string(*parse_pauli_label(lab), n) for lab in labels]


def expectation(A, rho):
    """Re tr(A rho); asserts the imaginary part is negligible."""
    op = A.op if isinstance(A, Observable) else np.asarray(A)
    if op.shape != rho.shape:
        raise ValueError(f"dimension mismatch: observable {op.shape} vs state {rho.shape}")
    # tr(A rho) = sum_ij A_ij rho_ji
    val = np.sum(op * rho.T)
    if abs(val.imag) > 1e-10:
        raise AssertionError(f"tr(A rho) has imaginary part {val.imag:.3e}")
    return float(val.real)


def trace_inner(A, B):
    """<A, B> = tr(A B)."""
    return np.sum(A * B.T)


def basis_state(bits):
    """Density matrix of the computational basis state |bits>."""
    n = len(bits)
    idx = int("".join(str(int(b)) for b in bits), 2) if n else 0
    rho = np.zeros((2**n, 2**n), dtype=np.complex128)
    rho[idx, idx] = 1.0
    return rho


def all_up_state(n):
    """Product state with every spin up (sigma^z = +1 on every site)."""
    return basis_state([0] * n)


@dataclass(frozen=True)
class LuFactorization:
    """Partial-pivoting LU factors of a square matrix."""

    lu: np.ndarray = field(repr=False)
    piv: np.ndarray = field(repr=False)
    source_id: int = 0


def lu_factor(M):
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("lu_factor expects a square matrix")
    with warnings.catch_warnings():
        # singular pivots are reported below with our own threshold
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    scale = np.linalg.norm(M, ord=np.inf)
    threshold = 1e-14 * (scale if scale > 0 else 1.0)
    diag = np.abs(np.diag(lu))
    bad = np.nonzero(diag <= threshold)[0]
    if bad.size:
        k = int(bad[0])
        raise SingularMatrixError(k, float(diag[k]), threshold)
    return LuFactorization(lu=lu, piv=piv, source_id=id(M))


def lu_solve(f, B):
    return scipy.linalg.lu_solve((f.lu, f.piv), np.asarray(B, dtype=np.complex128), check_finite=False)


def min_eigenvalue_hermitian(M, atol=1e-10):
    if not is_hermitian(M, atol=atol * max(1.0, np.max(np.abs(M), initial=0.0))):
        raise ValueError("min_eigenvalue_hermitian requires a Hermitian matrix")
    return float(np.linalg.eigvalsh(hermitize(M))[0])


def random_hermitian(d, rng, scale=1.0):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * hermitize(X)


def random_density(d, rng, rank=None):
    rank = d if rank is None else rank
    X = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = X @ adjoint(X)
    return rho / np.trace(rho).real
