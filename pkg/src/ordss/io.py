"""File formats: observation/state CSVs and fit-result JSON.

All outputs are self-describing (leading ``#`` comment lines carry the
package version, seed, and a config echo) and contain no timestamps, so a
fixed seed reproduces byte-identical files.
"""

import csv
import json

import numpy as np

from .errors import InvalidInputError
from .mif2 import FitResult, GrParameterSpace, LinearParameterSpace, Mif2Config

PACKAGE_VERSION = "0.1.0"


def _meta_lines(meta: dict) -> list:
    lines = [f"# ordss-version: {PACKAGE_VERSION}"]
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, dict):
            value = json.dumps(value, sort_keys=True)
        lines.append(f"# {key}: {value}")
    return lines


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_rows_csv(path, fieldnames, rows, meta: dict | None = None):
    """Write dict rows with a comment header; deterministic float formatting."""
    with open(path, "w", newline="") as fh:
        for line in _meta_lines(meta or {}):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fieldnames])


def read_rows_csv(path):
    """Read a comment-headed CSV back into (fieldnames, list of str dicts)."""
    with open(path, newline="") as fh:
        data_lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(data_lines)
    header = next(reader)
    return header, [dict(zip(header, row)) for row in reader]


def write_observations_csv(path, obs, meta: dict | None = None):
    """Observation CSV: header t, y1..yq; one row per timepoint."""
    obs = np.asarray(obs)
    fieldnames = ["t"] + [f"y{i + 1}" for i in range(obs.shape[1])]
    rows = [{"t": t + 1, **{f"y{i + 1}": obs[t, i] for i in range(obs.shape[1])}}
            for t in range(obs.shape[0])]
    write_rows_csv(path, fieldnames, rows, meta)


def read_observations_csv(path) -> np.ndarray:
    """Read an observation CSV (t, y1..yq) into a (T, q) float array."""
    header, rows = read_rows_csv(path)
    if not header or header[0] != "t" or len(header) < 2:
        raise InvalidInputError(f"{path}: expected header t,y1,...")
    try:
        out = np.array([[float(r[c]) for c in header[1:]] for r in rows])
    except (ValueError, KeyError) as exc:
        raise InvalidInputError(f"{path}: malformed observation CSV: {exc}") from exc
    if out.size == 0:
        raise InvalidInputError(f"{path}: no observation rows")
    return out


def write_states_csv(path, states, meta: dict | None = None):
    """True/filtered state CSV: header t, x1..xp."""
    states = np.asarray(states, dtype=np.float64)
    fieldnames = ["t"] + [f"x{i + 1}" for i in range(states.shape[1])]
    rows = [{"t": t + 1, **{f"x{i + 1}": states[t, i] for i in range(states.shape[1])}}
            for t in range(states.shape[0])]
    write_rows_csv(path, fieldnames, rows, meta)


def read_states_csv(path) -> np.ndarray:
    header, rows = read_rows_csv(path)
    if not header or header[0] != "t":
        raise InvalidInputError(f"{path}: expected header t,x1,...")
    return np.array([[float(r[c]) for c in header[1:]] for r in rows])


# ---------------------------------------------------------------------------
# fit-result JSON


def space_to_dict(space) -> dict:
    if isinstance(space, GrParameterSpace):
        return {
            "model": "grm",
            "p": space.p,
            "item_state": space.item_state.tolist(),
            "n_categories": space.n_categories.tolist(),
            "alpha": space.alpha.tolist(),
        }
    if isinstance(space, LinearParameterSpace):
        return {
            "model": "linear",
            "p": space.p,
            "item_state": space.item_state.tolist(),
        }
    raise InvalidInputError(f"unknown parameter space {type(space)!r}")


def space_from_dict(d: dict):
    if d["model"] == "grm":
        return GrParameterSpace(item_state=d["item_state"],
                                n_categories=d["n_categories"],
                                alpha=d.get("alpha"), p=d["p"])
    if d["model"] == "linear":
        return LinearParameterSpace(item_state=d["item_state"], p=d["p"])
    raise InvalidInputError(f"unknown model kind {d['model']!r}")


def _params_to_dict(space, params) -> dict:
    names = space.natural_names()
    vec = space.pack_natural(params)
    out = {"values": dict(zip(names, map(float, vec)))}
    out["a"] = params.A.tolist()
    if space.model_kind == "grm":
        out["betas"] = [b.tolist() for b in params.betas]
    else:
        out["loadings"] = params.loadings.tolist()
        out["psi_diag"] = params.psi_diag.tolist()
    return out


def fit_result_to_dict(fit: FitResult, space, seed: int,
                       states_path: str | None = None) -> dict:
    """JSON-ready representation of a fit, including an identification echo."""
    from .model_core import solve_identification

    sigma_diag, gamma = solve_identification(fit.averaged.A)
    cfg = fit.config
    return {
        "version": PACKAGE_VERSION,
        "seed": seed,
        "model": fit.model_kind,
        "structure": space_to_dict(space),
        "config": {
            "particles": cfg.n_particles,
            "iterations": cfg.n_iterations,
            "cooling": cfg.cooling_fraction_50,
            "perturb_sd": cfg.perturb_sd,
            "runs": cfg.n_runs,
        },
        "averaged": _params_to_dict(space, fit.averaged),
        "per_run": [_params_to_dict(space, pr) for pr in fit.per_run],
        "loglik_trace": [tr.tolist() for tr in fit.loglik_traces],
        "final_loglik": fit.final_loglik,
        "failed_runs": fit.failed_runs,
        "identification": {
            "sigma_diag": sigma_diag.tolist(),
            "stationary_gamma": gamma.tolist(),
            "stationary_variances": np.diag(gamma).tolist(),
        },
        "filtered_means_csv": states_path,
    }


def fit_result_from_dict(d: dict):
    """Rebuild (space, averaged params, failed_runs, config) from fit JSON."""
    space = space_from_dict(d["structure"])
    names = space.natural_names()
    vec = np.array([d["averaged"]["values"][n] for n in names])
    averaged = space.unpack_natural(vec)
    cfg = d.get("config", {})
    config = Mif2Config(n_particles=cfg.get("particles", 1000),
                        n_iterations=cfg.get("iterations", 250),
                        cooling_fraction_50=cfg.get("cooling", 0.05),
                        perturb_sd=cfg.get("perturb_sd", 0.3),
                        n_runs=cfg.get("runs", 4),
                        seed=d.get("seed", 0))
    return space, averaged, d.get("failed_runs", []), config


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
