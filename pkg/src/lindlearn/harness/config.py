"""Experiment configuration: a single versioned JSON document.

Top-level keys (defaults in parentheses)::

    schema_version   1 (mandatory)
    name             free text ("experiment")
    model            {family, n_qubits, mode ("amplitude")}
    seeds            {true_model, data (0), theta0 (0)}
    initial_state    "all_up" or a bit string such as "0101" ("all_up")
    data             {order (2), dt (0.01), simplified (false)}
    sim              {order (2), dt (0.01), simplified (false)}
    measurement      {delta_t, n_times, t_start (0), observables}
    noise            {n_shots (0), model ("bernoulli")}
    theta0           {perturbation_norm}
    lm               LMOptions fields (all optional)
    jacobian         "auto" | "forward" | "adjoint" ("auto")
    simulate         optional {t_final, record_every, runs: [{order, dt, simplified}], observables}
    sse              optional {scheme, dt, steps, n_traj, observables, block}

``measurement.observables`` is a basis name (``one_local``, ``two_local``,
``xy_one_local``) or a list of Pauli labels such as ``["Y2", "X1Z2"]``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from ..model import FAMILIES, MODES, ModelSpec
from ..optimizer import LMOptions

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(ValueError):
    pass


def _req(d, key, where):
    if key not in d:
        raise ConfigError(f"missing required key {where}.{key}")
    return d[key]


def _num(x, where, positive=False, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{where} must be a number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(f"{where} must be an integer, got {x!r}")
    if positive and not x > 0:
        raise ConfigError(f"{where} must be positive, got {x!r}")
    return int(x) if integer else float(x)


def _is_multiple(a, b):
    q = a / b
    return abs(q - round(q)) <= 1e-9 * max(1.0, q) and round(q) >= 0


@dataclass(frozen=True)
class Integrator:
    order: int = 2
    dt: float = 0.01
    simplified: bool = False

    @classmethod
    def parse(cls, d, where):
        d = d or {}
        order = _num(d.get("order", 2), f"{where}.order", integer=True)
        if order not in (1, 2):
            raise ConfigError(f"{where}.order must be 1 or 2")
        simplified = bool(d.get("simplified", False))
        if simplified and order == 1:
            raise ConfigError(f"{where}.simplified only applies to order 2")
        return cls(order, _num(d.get("dt", 0.01), f"{where}.dt", positive=True), simplified)

    def to_dict(self):
        return {"order": self.order, "dt": self.dt, "simplified": self.simplified}


@dataclass
class ExperimentConfig:
    raw: dict
    name: str
    spec: ModelSpec
    seed_true: int
    seed_data: int
    seed_theta0: int
    initial_state: str
    data: Integrator
    sim: Integrator
    delta_t: float
    n_times: int
    t_start: float
    observables: object
    n_shots: int
    noise_model: str
    perturbation_norm: float | None
    lm: LMOptions
    jacobian: str
    simulate: dict | None = None
    sse: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return copy.deepcopy(self.raw)


def parse_config(doc):
    """Validate a config dict; raises :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in doc:
        raise ConfigError("missing mandatory schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r} (expected {SCHEMA_VERSION})")
    m = _req(doc, "model", "config")
    family = _req(m, "family", "model")
    if family not in FAMILIES:
        raise ConfigError(f"model.family must be one of {FAMILIES}")
    mode = m.get("mode", "amplitude")
    if mode not in MODES:
        raise ConfigError(f"model.mode must be one of {MODES}")
    n = _num(_req(m, "n_qubits", "model"), "model.n_qubits", positive=True, integer=True)
    if n > 8:
        raise ConfigError("model.n_qubits above 8 is outside the dense-storage target")
    spec = ModelSpec(family, n, mode)
    seeds = _req(doc, "seeds", "config")
    seed_true = _num(_req(seeds, "true_model", "seeds"), "seeds.true_model", integer=True)
    seed_data = _num(seeds.get("data", 0), "seeds.data", integer=True)
    seed_theta0 = _num(seeds.get("theta0", 0), "seeds.theta0", integer=True)
    init = doc.get("initial_state", "all_up")
    if init != "all_up" and (len(init) != n or set(init) - {"0", "1"}):
        raise ConfigError(f"initial_state must be 'all_up' or a {n}-bit string")
    data = Integrator.parse(doc.get("data"), "data")
    sim = Integrator.parse(doc.get("sim"), "sim")
    meas = _req(doc, "measurement", "config")
    delta_t = _num(_req(meas, "delta_t", "measurement"), "measurement.delta_t", positive=True)
    n_times = _num(_req(meas, "n_times", "measurement"), "measurement.n_times", positive=True, integer=True)
    t_start = _num(meas.get("t_start", 0.0), "measurement.t_start")
    if t_start < 0:
        raise ConfigError("measurement.t_start must be non-negative")
    for integ, where in ((data, "data"), (sim, "sim")):
        if not _is_multiple(delta_t, integ.dt):
            raise ConfigError(f"measurement.delta_t={delta_t} is not an integer multiple of {where}.dt={integ.dt}")
        if not _is_multiple(t_start, integ.dt):
            raise ConfigError(f"measurement.t_start={t_start} is not a multiple of {where}.dt={integ.dt}")
    obs = _req(meas, "observables", "measurement")
    if isinstance(obs, str):
        if obs not in ("one_local", "two_local", "xy_one_local"):
            raise ConfigError(f"unknown observable basis {obs!r}")
    elif not (isinstance(obs, list) and obs and all(isinstance(o, str) for o in obs)):
        raise ConfigError("measurement.observables must be a basis name or a list of labels")
    noise = doc.get("noise", {})
    n_shots = _num(noise.get("n_shots", 0), "noise.n_shots", integer=True)
    if n_shots < 0:
        raise ConfigError("noise.n_shots must be >= 0")
    noise_model = noise.get("model", "bernoulli")
    if noise_model not in ("bernoulli", "gaussian"):
        raise ConfigError("noise.model must be 'bernoulli' or 'gaussian'")
    th0 = doc.get("theta0", {})
    pert = th0.get("perturbation_norm")
    if pert is not None:
        pert = _num(pert, "theta0.perturbation_norm")
        if pert < 0:
            raise ConfigError("theta0.perturbation_norm must be >= 0")
    try:
        lm = LMOptions(**doc.get("lm", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid lm options: {exc}") from exc
    jac = doc.get("jacobian", "auto")
    if jac not in ("auto", "forward", "adjoint"):
        raise ConfigError("jacobian must be auto, forward or adjoint")
    sim_block = doc.get("simulate")
    if sim_block is not None:
        _num(_req(sim_block, "t_final", "simulate"), "simulate.t_final", positive=True)
        for i, run in enumerate(_req(sim_block, "runs", "simulate")):
            Integrator.parse(run, f"simulate.runs[{i}]")
    sse = doc.get("sse")
    if sse is not None:
        if sse.get("scheme", "second") not in ("first", "second"):
            raise ConfigError("sse.scheme must be first or second")
        _num(_req(sse, "n_traj", "sse"), "sse.n_traj", positive=True, integer=True)
        _num(_req(sse, "steps", "sse"), "sse.steps", integer=True)
        _num(sse.get("dt", 0.01), "sse.dt", positive=True)
    return ExperimentConfig(
        raw=copy.deepcopy(doc),
        name=str(doc.get("name", "experiment")),
        spec=spec,
        seed_true=seed_true,
        seed_data=seed_data,
        seed_theta0=seed_theta0,
        initial_state=init,
        data=data,
        sim=sim,
        delta_t=delta_t,
        n_times=n_times,
        t_start=t_start,
        observables=obs,
        n_shots=n_shots,
        noise_model=noise_model,
        perturbation_norm=pert,
        lm=lm,
        jacobian=jac,
        simulate=sim_block,
        sse=sse,
    )


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def override_seed(doc, seed):
    """Derive every seed from one base value: true model ``s``, data ``s+1``, theta0 ``s+2``."""
    doc = copy.deepcopy(doc)
    doc["seeds"] = {"true_model": int(seed), "data": int(seed) + 1, "theta0": int(seed) + 2}
    return doc
