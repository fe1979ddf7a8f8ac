"""Parameterized Lindbladian families and their analytic parameter derivatives.

Two families on an open chain of ``n`` qubits share the Hamiltonian

    H = sum_j sum_a e[j,a] s_j^a + sum_{j<n} sum_{a,b} c[j,a,b] s_j^a s_{j+1}^b

and differ in the jump operators:

``linear_dissipator``
    ``2n`` jumps ``sqrt(lam1) s_j^-`` then ``sqrt(lam2) s_j^z``. In
    ``amplitude`` mode (default) the free parameters are ``s1, s2`` with
    ``lam = s**2``; ``strength`` mode optimizes ``lam`` directly.
``pauli_jump``
    ``n`` jumps ``V_j = sum_a (d1[j,a] + i d2[j,a]) s_j^a`` with the gauge
    slot ``d2[j,x]`` removed.

Parameter layout: every ``e`` (site-major, axis-minor), every ``c``
(bond-major, then first axis, then second axis), then the dissipative
block. Names print sites 1-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .operators import AXES, PAULI, SIGMA_MINUS, adjoint, embed_local

FAMILIES = ("linear_dissipator", "pauli_jump")
MODES = ("amplitude", "strength")
LAYOUT_SCHEMA_VERSION = 1


def superop(A, B):
    """Single-site superoperator tensor for ``X -> A X B^dag``."""
    return np.einsum("ax,by->abxy", A, np.conj(B))


@dataclass(frozen=True)
class ModelSpec:
    family: str
    n: int
    mode: str = "amplitude"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown dissipative mode {self.mode!r}")
        if self.n < 1:
            raise ValueError("need at least one qubit")

    @property
    def dim(self):
        return 2**self.n

    @property
    def n_jumps(self):
        return 2 * self.n if self.family == "linear_dissipator" else self.n

    @property
    def n_hamiltonian(self):
        return 3 * self.n + 9 * (self.n - 1)

    @cached_property
    def names(self):
        names = [f"e_{j + 1}_{a}" for j in range(self.n) for a in AXES]
        names += [f"c_{j + 1}_{a}{b}" for j in range(self.n - 1) for a in AXES for b in AXES]
        if self.family == "linear_dissipator":
            prefix = "s" if self.mode == "amplitude" else "lambda"
            names += [f"{prefix}_1", f"{prefix}_2"]
        else:
            for j in range(self.n):
                names += [f"d1_{j + 1}_{a}" for a in AXES]
                names += [f"d2_{j + 1}_{a}" for a in AXES[1:]]
        return tuple(names)

    @property
    def n_params(self):
        return len(self.names)

    def jump_sites(self):
        if self.family == "linear_dissipator":
            return [j % self.n for j in range(2 * self.n)]
        return list(range(self.n))

    def to_dict(self):
        return {"family": self.family, "n_qubits": self.n, "mode": self.mode}

    @classmethod
    def from_dict(cls, d):
        return cls(family=d["family"], n=int(d["n_qubits"]), mode=d.get("mode", "amplitude"))


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def unpack(self):
        return dict(zip(self.spec.names, self.values.tolist()))

    @classmethod
    def pack(cls, named, spec):
        missing = set(spec.names) - set(named)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        return cls(np.array([named[k] for k in spec.names], dtype=float), spec)

    def to_json(self):
        doc = {
            "schema_version": LAYOUT_SCHEMA_VERSION,
            "model": self.spec.to_dict(),
            "names": list(self.spec.names),
            "values": self.values.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != LAYOUT_SCHEMA_VERSION:
            raise ValueError(f"unsupported parameter schema version {doc.get('schema_version')!r}")
        spec = ModelSpec.from_dict(doc["model"])
        if tuple(doc["names"]) != spec.names:
            raise ValueError("parameter names do not match the model layout")
        return cls(np.array(doc["values"], dtype=float), spec)


@dataclass
class LindbladOperators:
    """Hamiltonian, jump operators and ``G = -iH - 1/2 sum V^dag V``.

    ``jump_local`` holds, when every jump acts on one site, the 2x2 factor
    of each jump and ``jump_sites`` its site; the fast propagator path uses
    them instead of the dense ``V``.
    """

    H: np.ndarray
    V: list
    n: int
    jump_sites: list | None = None
    jump_local: list | None = None
    G: np.ndarray = field(init=False)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        self.V = [np.asarray(v, dtype=np.complex128) for v in self.V]
        G = -1j * self.H
        for v in self.V:
            G = G - 0.5 * adjoint(v) @ v
        self.G = G

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def is_local(self):
        return self.jump_local is not None

    def site_superops(self, adjoint_map=False):
        """Per-site superoperator tensors of ``D`` (or ``D^*``), shape (n,2,2,2,2)."""
        om = np.zeros((self.n, 2, 2, 2, 2), dtype=np.complex128)
        for s, v in zip(self.jump_sites, self.jump_local):
            if adjoint_map:
                om[s] += superop(adjoint(v), adjoint(v))
            else:
                om[s] += superop(v, v)
        return om


def _hamiltonian_terms(n):
    """(sites, axes) of every Hamiltonian basis term, in layout order."""
    terms = [((j,), (a,)) for j in range(n) for a in AXES]
    terms += [((j, j + 1), (a, b)) for j in range(n - 1) for a in AXES for b in AXES]
    return terms


def _pauli_product(sites, axes, n):
    op = embed_local(PAULI[axes[0]], sites[0], n)
    for s, a in zip(sites[1:], axes[1:]):
        op = op @ embed_local(PAULI[a], s, n)
    return op


def build_hamiltonian(theta_H, n):
    theta_H = np.asarray(theta_H, dtype=float)
    terms = _hamiltonian_terms(n)
    if theta_H.shape != (len(terms),):
        raise ValueError(f"Hamiltonian slice must have {len(terms)} entries, got {theta_H.shape}")
    H = np.zeros((2**n, 2**n), dtype=np.complex128)
    for coef, (sites, axes) in zip(theta_H, terms):
        if coef != 0.0:
            H += coef * _pauli_product(sites, axes, n)
    return H


def _local_jumps(theta_D, spec):
    """2x2 factor of every jump, in jump order."""
    theta_D = np.asarray(theta_D, dtype=float)
    n = spec.n
    if spec.family == "linear_dissipator":
        if theta_D.shape != (2,):
            raise ValueError("linear_dissipator has two dissipative parameters")
        if spec.mode == "strength":
            if np.any(theta_D < 0):
                raise ValueError(f"negative dissipation strength {theta_D.tolist()} in strength mode")
            amp = np.sqrt(theta_D)
        else:
            # sign of s is a global phase of the jump; keeps d/ds smooth at 0
            amp = theta_D
        return [amp[0] * SIGMA_MINUS] * n + [amp[1] * PAULI["z"]] * n
    if theta_D.shape != (5 * n,):
        raise ValueError(f"pauli_jump needs {5 * n} dissipative parameters")
    out = []
    for j in range(n):
        re = theta_D[5 * j : 5 * j + 3]
        im = np.concatenate([[0.0], theta_D[5 * j + 3 : 5 * j + 5]])
        coef = re + 1j * im
        out.append(sum(c * PAULI[a] for c, a in zip(coef, AXES)))
    return out


def build_jumps(theta_D, spec):
    sites = spec.jump_sites()
    return [embed_local(v, s, spec.n) for v, s in zip(_local_jumps(theta_D, spec), sites)]


def build_operators(spec, theta):
    theta = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    nh = spec.n_hamiltonian
    H = build_hamiltonian(theta[:nh], spec.n)
    local = _local_jumps(theta[nh:], spec)
    sites = spec.jump_sites()
    V = [embed_local(v, s, spec.n) for v, s in zip(local, sites)]
    return LindbladOperators(H=H, V=V, n=spec.n, jump_sites=sites, jump_local=local)


def _local_jump_derivatives(spec, theta, alpha):
    """[(jump index, 2x2 dV)] for dissipative parameter ``alpha``."""
    nh = spec.n_hamiltonian
    k = alpha - nh
    n = spec.n
    if spec.family == "linear_dissipator":
        val = theta[alpha]
        base = SIGMA_MINUS if k == 0 else PAULI["z"]
        if spec.mode == "strength":
            if val <= 0:
                raise ValueError(
                    f"derivative of sqrt(lambda) is singular at lambda={val}; use mode='amplitude' for strengths at or near zero"
                )
            scale = 0.5 / np.sqrt(val)
        else:
            scale = 1.0
        return [(k * n + j, scale * base) for j in range(n)]
    j, slot = divmod(k, 5)
    if slot < 3:
        return [(j, PAULI[AXES[slot]].copy())]
    return [(j, 1j * PAULI[AXES[slot - 2]])]


def operator_derivative(spec, theta, alpha):
    """Exact derivative of ``(H, [V_j], G)`` with respect to parameter ``alpha``."""
    theta = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    if not 0 <= alpha < spec.n_params:
        raise IndexError(f"parameter index {alpha} outside layout of size {spec.n_params}")
    d = spec.dim
    nh = spec.n_hamiltonian
    dH = np.zeros((d, d), dtype=np.complex128)
    dV = [np.zeros((d, d), dtype=np.complex128) for _ in range(spec.n_jumps)]
    if alpha < nh:
        sites, axes = _hamiltonian_terms(spec.n)[alpha]
        dH = _pauli_product(sites, axes, spec.n)
        return dH, dV, -1j * dH
    ops = build_operators(spec, theta)
    sites = spec.jump_sites()
    dG = np.zeros((d, d), dtype=np.complex128)
    for j, dv in _local_jump_derivatives(spec, theta, alpha):
        dV[j] = embed_local(dv, sites[j], spec.n)
        dG -= 0.5 * (adjoint(dV[j]) @ ops.V[j] + adjoint(ops.V[j]) @ dV[j])
    return dH, dV, dG


@dataclass
class DerivativeTables:
    """Flat arrays describing ``dG``, ``dV`` and ``dD`` for every parameter.

    ``dG_alpha = sum_t g_coef[t] * prod_f (g_mats[t, f] on g_sites[t, f])``
    over terms with ``g_idx[t] == alpha``. Dissipative parameters (listed
    in ``dis_params``) additionally carry jump derivatives ``(v_j, v_mat)``
    and site superoperators of ``dD`` indexed into ``dis_params``.
    """

    n_params: int
    g_idx: np.ndarray
    g_coef: np.ndarray
    g_nf: np.ndarray
    g_sites: np.ndarray
    g_mats: np.ndarray
    dis_params: np.ndarray
    v_idx: np.ndarray
    v_jump: np.ndarray
    v_mats: np.ndarray
    dd_idx: np.ndarray
    dd_sites: np.ndarray
    dd_oms: np.ndarray


def derivative_tables(spec, theta):
    theta = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    local = _local_jumps(theta[spec.n_hamiltonian :], spec)
    jsites = spec.jump_sites()
    g_idx, g_coef, g_nf, g_sites, g_mats = [], [], [], [], []
    eye = np.eye(2, dtype=np.complex128)
    for alpha, (sites, axes) in enumerate(_hamiltonian_terms(spec.n)):
        g_idx.append(alpha)
        g_coef.append(-1j)
        g_nf.append(len(sites))
        g_sites.append([sites[0], sites[-1]])
        g_mats.append([PAULI[axes[0]], PAULI[axes[-1]] if len(sites) == 2 else eye])
    dis, v_idx, v_jump, v_mats = [], [], [], []
    dd_idx, dd_sites, dd_oms = [], [], []
    for k, alpha in enumerate(range(spec.n_hamiltonian, spec.n_params)):
        dis.append(alpha)
        by_site = {}
        for j, dv in _local_jump_derivatives(spec, theta, alpha):
            v = local[j]
            s = jsites[j]
            v_idx.append(alpha)
            v_jump.append(j)
            v_mats.append(dv)
            g_idx.append(alpha)
            g_coef.append(-0.5 + 0j)
            g_nf.append(1)
            g_sites.append([s, s])
            g_mats.append([adjoint(dv) @ v + adjoint(v) @ dv, eye])
            om = superop(dv, v) + superop(v, dv)
            by_site[s] = by_site.get(s, 0) + om
        for s, om in sorted(by_site.items()):
            dd_idx.append(k)
            dd_sites.append(s)
            dd_oms.append(om)

    def arr(x, dtype, shape):
        return np.array(x, dtype=dtype).reshape(shape)

    return DerivativeTables(
        n_params=spec.n_params,
        g_idx=arr(g_idx, np.int64, (-1,)),
        g_coef=arr(g_coef, np.complex128, (-1,)),
        g_nf=arr(g_nf, np.int64, (-1,)),
        g_sites=arr(g_sites, np.int64, (-1, 2)),
        g_mats=arr(g_mats, np.complex128, (-1, 2, 2, 2)),
        dis_params=arr(dis, np.int64, (-1,)),
        v_idx=arr(v_idx, np.int64, (-1,)),
        v_jump=arr(v_jump, np.int64, (-1,)),
        v_mats=arr(v_mats, np.complex128, (-1, 2, 2)),
        dd_idx=arr(dd_idx, np.int64, (-1,)),
        dd_sites=arr(dd_sites, np.int64, (-1,)),
        dd_oms=arr(dd_oms, np.complex128, (-1, 2, 2, 2, 2)),
    )


def random_true_model(seed, spec):
    """Random ground-truth parameters, deterministic per seed.

    Hamiltonian couplings ~ N(0, 1). Linear dissipator strengths are drawn
    from |N(0, 1)| (stored as amplitudes ``sqrt(lam)`` in amplitude mode).
    Pauli-jump coefficients have Re, Im ~ N(0, 1/2); each jump's coefficient
    row is then rotated by a global phase so ``d[j,x]`` is real, which
    leaves the Lindbladian unchanged.
    """
    rng = np.random.default_rng(seed)
    theta_H = rng.normal(size=spec.n_hamiltonian)
    if spec.family == "linear_dissipator":
        lam = np.abs(rng.normal(size=2))
        theta_D = np.sqrt(lam) if spec.mode == "amplitude" else lam
    else:
        theta_D = []
        for _ in range(spec.n):
            dvec = rng.normal(scale=np.sqrt(0.5), size=3) + 1j * rng.normal(scale=np.sqrt(0.5), size=3)
            phase = np.exp(-1j * np.angle(dvec[0]))
            dvec = dvec * phase
            theta_D += [*dvec.real, dvec.imag[1], dvec.imag[2]]
        theta_D = np.array(theta_D)
    return ParameterVector(np.concatenate([theta_H, theta_D]), spec)
