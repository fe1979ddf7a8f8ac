"""Synthetic measurement data and the dataset file format.

A dataset file is one JSON line (the header: config echo, observable
labels, seeds, true parameters) followed by a CSV table ``k,n,t,value``
with ``n`` counted from 1. Values are written with 17 significant digits
so a reloaded dataset is bit-identical.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from ..learning import MeasurementDataset
from ..model import LAYOUT_SCHEMA_VERSION, ModelSpec, build_operators, random_true_model
from ..operators import all_up_state, basis_state, observable_basis, observables_from_labels
from ..propagator import KrausMap, evolve_expectations, steps_per_interval

DATASET_FORMAT_VERSION = 1


def initial_state(name, n):
    return all_up_state(n) if name == "all_up" else basis_state([int(c) for c in name])


def observables_for(cfg_obs, n):
    if isinstance(cfg_obs, str):
        return observable_basis(cfg_obs, n)
    return observables_from_labels(cfg_obs, n)


def exact_expectations(theta, spec, observables, rho0, integrator, delta_t, n_times, t_start=0.0):
    ops = build_operators(spec, theta)
    K = KrausMap(ops, order=integrator.order, dt=integrator.dt, simplified=integrator.simplified)
    L = steps_per_interval(delta_t, integrator.dt)
    offset = 0 if t_start == 0 else steps_per_interval(t_start, integrator.dt)
    return evolve_expectations(K, rho0, observables, n_times, L, offset_steps=offset)


def sample_shots(y, observables, n_shots, model, rng):
    """Shot-noise estimates of expectations ``y`` (N_O, N_T).

    ``bernoulli``: mean of ``n_shots`` outcomes in {-1, +1} with
    ``p(+1) = (1 + y) / 2``, drawn as a binomial count. ``gaussian``: adds
    ``N(0, (1 - y^2) / n_shots)`` and clips to [-1, 1]. Identity rows stay exact.
    """
    out = y.copy()
    for k, A in enumerate(observables):
        if not A.sites:
            continue
        row = np.clip(y[k], -1.0, 1.0)
        if model == "bernoulli":
            counts = rng.binomial(n_shots, (1.0 + row) / 2.0)
            out[k] = (2.0 * counts - n_shots) / n_shots
        elif model == "gaussian":
            sd = np.sqrt(np.maximum(1.0 - row**2, 0.0) / n_shots)
            out[k] = np.clip(row + sd * rng.normal(size=row.shape), -1.0, 1.0)
        else:
            raise ValueError(f"unknown noise model {model!r}")
    return out


def generate_data(cfg):
    """Dataset for a parsed config; deterministic in ``cfg`` seeds."""
    spec = cfg.spec
    theta_true = random_true_model(cfg.seed_true, spec)
    obs = observables_for(cfg.observables, spec.n)
    rho0 = initial_state(cfg.initial_state, spec.n)
    y = exact_expectations(theta_true.values, spec, obs, rho0, cfg.data, cfg.delta_t, cfg.n_times, cfg.t_start)
    worst = float(np.max(np.abs(y[[k for k, A in enumerate(obs) if A.sites]]), initial=0.0))
    if worst > 1.0 + 1e-8:
        raise ValueError(f"expectation {worst:.12g} outside [-1, 1]; integrator misuse")
    if cfg.n_shots > 0:
        rng = np.random.default_rng(cfg.seed_data)
        y = sample_shots(y, obs, cfg.n_shots, cfg.noise_model, rng)
    ds = MeasurementDataset(
        spec=spec,
        observables=obs,
        delta_t=cfg.delta_t,
        values=y,
        rho0=rho0,
        t_start=cfg.t_start,
        n_shots=cfg.n_shots,
        seed=cfg.seed_data if cfg.n_shots else None,
        noise=cfg.noise_model if cfg.n_shots else "none",
    )
    ds.extra = {"theta_true": theta_true.values.tolist(), "initial_state": cfg.initial_state, "config": cfg.to_dict()}
    return ds


def dataset_header(ds):
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "layout_schema_version": LAYOUT_SCHEMA_VERSION,
        "model": ds.spec.to_dict(),
        "observables": [A.label for A in ds.observables],
        "delta_t": ds.delta_t,
        "t_start": ds.t_start,
        "n_times": ds.n_times,
        "n_shots": ds.n_shots,
        "noise": ds.noise,
        "seed": ds.seed,
        "initial_state": ds.extra.get("initial_state", "all_up"),
        "theta_true": ds.extra.get("theta_true"),
        "config": ds.extra.get("config"),
    }


def dataset_to_text(ds):
    buf = io.StringIO()
    buf.write(json.dumps(dataset_header(ds), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "n", "t", "value"])
    times = ds.times
    for k in range(ds.n_obs):
        for n in range(ds.n_times):
            w.writerow([k, n + 1, f"{times[n]:.15g}", f"{ds.values[k, n]:.17g}"])
    return buf.getvalue()


def write_dataset(ds, path):
    with open(path, "w", newline="") as fh:
        fh.write(dataset_to_text(ds))


def read_dataset(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = list(csv.DictReader(fh))
    if header.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {header.get('format_version')!r}")
    spec = ModelSpec.from_dict(header["model"])
    obs = observables_from_labels(header["observables"], spec.n)
    values = np.empty((len(obs), header["n_times"]))
    for r in rows:
        values[int(r["k"]), int(r["n"]) - 1] = float(r["value"])
    ds = MeasurementDataset(
        spec=spec,
        observables=obs,
        delta_t=header["delta_t"],
        values=values,
        rho0=initial_state(header.get("initial_state", "all_up"), spec.n),
        t_start=header.get("t_start", 0.0),
        n_shots=header.get("n_shots", 0),
        seed=header.get("seed"),
        noise=header.get("noise", "none"),
    )
    ds.extra = {k: header.get(k) for k in ("theta_true", "initial_state", "config")}
    return ds
