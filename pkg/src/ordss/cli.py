"""Command-line interface: simulate, fit, se, and study subcommands.

Exit codes: 0 ok, 2 validation error, 3 precondition violation,
4 estimation failure, 5 I/O error.  ``ORDSS_THREADS`` overrides
``--threads``; every subcommand is deterministic given its config and seed
regardless of thread count.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .errors import (
    EstimationFailureError,
    FilterDegeneracyError,
    InvalidInputError,
    OrdssError,
)
from .inference import SliceConfig, slice_se, wald_ci
from .mif2 import (
    GrParameterSpace,
    LinearParameterSpace,
    Mif2Config,
    center_columns,
    fit,
)
from .simulate import SimulationRecipe, simulate_dataset
from .study import (
    DESK_MIF2,
    DESK_REPLICATIONS,
    StudyCondition,
    default_threads,
    full_factor_grid,
    run_study,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PRECONDITION = 3
EXIT_ESTIMATION = 4
EXIT_IO = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordss",
        description="Ordinal-outcome state-space models: simulate, fit "
                    "(iterated particle filtering), slice SEs, and the "
                    "Monte-Carlo study harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a dataset from the study design")
    sim.add_argument("--timepoints", type=int, required=True)
    sim.add_argument("--items", type=int, required=True,
                     help="items per state (2 states)")
    sim.add_argument("--categories", type=int, required=True)
    sim.add_argument("--ar", type=float, required=True)
    sim.add_argument("--cr", type=float, required=True)
    sim.add_argument("--thresholds", choices=["equal", "offset"], default="equal")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="observation CSV path")
    sim.add_argument("--states-out", default=None,
                     help="optional true-states CSV path")

    fit_p = sub.add_parser("fit", help="fit a model by iterated filtering (MIF2)")
    fit_p.add_argument("--model", choices=["grm", "linear"], required=True)
    fit_p.add_argument("--data", required=True, help="observation CSV")
    fit_p.add_argument("--particles", type=int, default=1000)
    fit_p.add_argument("--iterations", type=int, default=250)
    fit_p.add_argument("--cooling", type=float, default=0.05,
                       help="perturbation variance fraction per 50 iterations")
    fit_p.add_argument("--perturb-sd", type=float, default=0.3)
    fit_p.add_argument("--runs", type=int, default=4)
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--states", type=int, default=2, help="state dimension")
    fit_p.add_argument("--item-states", default=None,
                       help="comma-separated 0-based state index per item "
                            "(default: items split evenly across states)")
    fit_p.add_argument("--categories", type=int, default=None,
                       help="response categories per item (GR; default: "
                            "largest observed category per item)")
    fit_p.add_argument("--out", required=True, help="fit JSON path")

    se_p = sub.add_parser("se", help="slice-likelihood SEs for a fitted model")
    se_p.add_argument("--fit", required=True, help="fit JSON from the fit command")
    se_p.add_argument("--data", required=True, help="observation CSV")
    se_p.add_argument("--points", type=int, default=21)
    se_p.add_argument("--half-width", type=float, default=0.5)
    se_p.add_argument("--replicates", type=int, default=3)
    se_p.add_argument("--particles", type=int, default=1000)
    se_p.add_argument("--seed", type=int, default=0)
    se_p.add_argument("--params", default=None,
                      help="comma-separated parameter names (default: all)")
    se_p.add_argument("--out", default=None,
                      help="output JSON (default: rewrite --fit in place)")

    study_p = sub.add_parser("study", help="run the Monte-Carlo study harness")
    study_p.add_argument("--config", required=True, help="study config JSON")
    study_p.add_argument("--out", required=True, help="output directory")
    study_p.add_argument("--threads", type=int, default=None)
    return parser


def _item_states(arg, q: int, p: int) -> np.ndarray:
    if arg:
        values = np.array([int(v) for v in arg.split(",")], dtype=np.int64)
        if values.size != q:
            raise InvalidInputError(f"--item-states needs {q} entries, got {values.size}")
    else:
        per_state = q // p
        if per_state * p != q:
            raise InvalidInputError(
                f"{q} items do not split evenly across {p} states; "
                "pass --item-states explicitly")
        values = np.repeat(np.arange(p, dtype=np.int64), per_state)
    if values.min() < 0 or values.max() >= p:
        raise InvalidInputError(f"item state indices must be in [0, {p})")
    return values


def cmd_simulate(args) -> int:
    recipe = SimulationRecipe(
        timepoints=args.timepoints, ar=args.ar, cr=args.cr,
        items_per_state=args.items, n_categories=args.categories,
        threshold_mode=args.thresholds, seed=args.seed)
    states, obs = simulate_dataset(recipe)
    meta = {
        "seed": args.seed,
        "config": {
            "timepoints": args.timepoints, "items": args.items,
            "categories": args.categories, "ar": args.ar, "cr": args.cr,
            "thresholds": args.thresholds,
        },
    }
    io.write_observations_csv(args.out, obs, meta)
    if args.states_out:
        io.write_states_csv(args.states_out, states, meta)
    print(f"wrote {obs.shape[0]} timepoints x {obs.shape[1]} items to {args.out}")
    return EXIT_OK


def _infer_categories(data: np.ndarray, override) -> list:
    if override is not None:
        if override < 2:
            raise InvalidInputError("--categories must be >= 2")
        return [override] * data.shape[1]
    return [max(2, int(data[:, i].max())) for i in range(data.shape[1])]


def cmd_fit(args) -> int:
    raw = io.read_observations_csv(args.data)
    q = raw.shape[1]
    item_state = _item_states(args.item_states, q, args.states)
    config = Mif2Config(n_particles=args.particles, n_iterations=args.iterations,
                        cooling_fraction_50=args.cooling,
                        perturb_sd=args.perturb_sd, n_runs=args.runs,
                        seed=args.seed)
    if args.model == "grm":
        space = GrParameterSpace(item_state,
                                 _infer_categories(raw, args.categories),
                                 p=args.states)
        data = space.prepare_data(raw)
    else:
        space = LinearParameterSpace(item_state, p=args.states)
        data = center_columns(raw)
    result = fit(space, data, config)
    states_path = os.path.splitext(args.out)[0] + "_states.csv"
    io.write_states_csv(states_path, result.filtered_means,
                        {"seed": args.seed, "kind": "filtered_means"})
    payload = io.fit_result_to_dict(result, space, args.seed,
                                    states_path=os.path.basename(states_path))
    io.write_json(args.out, payload)
    print(f"fit ({args.model}) written to {args.out}; "
          f"final loglik {result.final_loglik:.3f}; "
          f"{len(result.failed_runs)} failed runs")
    return EXIT_OK


def cmd_se(args) -> int:
    payload = io.read_json(args.fit)
    if payload.get("failed_runs"):
        print("error: fit has failed runs; refusing to compute SEs", file=sys.stderr)
        return EXIT_PRECONDITION
    space, averaged, failed_runs, config = io.fit_result_from_dict(payload)
    raw = io.read_observations_csv(args.data)
    if space.model_kind == "grm":
        data = space.prepare_data(raw)
    else:
        data = center_columns(raw)
    from .mif2 import FitResult

    shell = FitResult(model_kind=space.model_kind, averaged=averaged,
                      per_run=[averaged], loglik_traces=[],
                      filtered_means=np.zeros((raw.shape[0], space.p)),
                      final_loglik=float(payload.get("final_loglik", 0.0)),
                      effective_sample_sizes=None, failed_runs=failed_runs,
                      config=config)
    names = tuple(args.params.split(",")) if args.params else ()
    scfg = SliceConfig(n_points=args.points, half_width=args.half_width,
                       replicates=args.replicates, n_particles=args.particles,
                       seed=args.seed, param_names=names)
    result = slice_se(shell, space, data, scfg)

    def finite_or_none(v):
        return float(v) if np.isfinite(v) else None

    se_block = {"config": {"points": args.points, "half_width": args.half_width,
                           "replicates": args.replicates,
                           "particles": args.particles, "seed": args.seed},
                "se": {k: finite_or_none(v) for k, v in result.se.items()},
                "curvature": {k: finite_or_none(v)
                              for k, v in result.curvature.items()},
                "flags": result.flags, "ci": {}}
    values = payload["averaged"]["values"]
    for name, se_val in result.se.items():
        if np.isfinite(se_val) and se_val > 0:
            est = values[name]
            se_block["ci"][name] = {
                "95": list(wald_ci(est, se_val, 0.95)),
                "99.8": list(wald_ci(est, se_val, 0.998)),
            }
    se_block["slice_points"] = {
        name: {"values": vals.tolist(), "logliks": lls.tolist()}
        for name, (vals, lls) in result.slice_points.items()
    }
    payload["se"] = se_block
    io.write_json(args.out or args.fit, payload)
    print(f"slice SEs for {len(result.se)} parameters written to "
          f"{args.out or args.fit}")
    return EXIT_OK


_STUDY_KEYS = {"conditions", "replications", "base_seed", "mif2", "slice",
               "models", "full_grid"}
_CONDITION_KEYS = {"timepoints", "items_per_state", "categories", "ar", "cr",
                   "threshold_mode", "free_grid"}
_MIF2_KEYS = {"particles", "iterations", "cooling", "perturb_sd", "runs"}
_SLICE_KEYS = {"points", "half_width", "replicates", "particles"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInputError(f"unknown keys in {where}: {sorted(unknown)}")


def _parse_study_config(payload: dict):
    _reject_unknown(payload, _STUDY_KEYS, "study config")
    if payload.get("full_grid"):
        conditions = full_factor_grid()
    else:
        conditions = []
        for cd in payload.get("conditions", []):
            _reject_unknown(cd, _CONDITION_KEYS, "condition")
            conditions.append(StudyCondition(**cd))
    if not conditions:
        raise InvalidInputError("study config has no conditions")
    replications = payload.get("replications", DESK_REPLICATIONS)
    base_seed = payload.get("base_seed", 0)
    mif2_conf = dict(payload.get("mif2", {}))
    _reject_unknown(mif2_conf, _MIF2_KEYS, "mif2 block")
    mif2_config = Mif2Config(
        n_particles=mif2_conf.get("particles", DESK_MIF2.n_particles),
        n_iterations=mif2_conf.get("iterations", DESK_MIF2.n_iterations),
        cooling_fraction_50=mif2_conf.get("cooling", DESK_MIF2.cooling_fraction_50),
        perturb_sd=mif2_conf.get("perturb_sd", DESK_MIF2.perturb_sd),
        n_runs=mif2_conf.get("runs", DESK_MIF2.n_runs))
    slice_conf = dict(payload.get("slice", {}))
    _reject_unknown(slice_conf, _SLICE_KEYS, "slice block")
    slice_config = SliceConfig(
        n_points=slice_conf.get("points", 21),
        half_width=slice_conf.get("half_width", 0.5),
        replicates=slice_conf.get("replicates", 3),
        n_particles=slice_conf.get("particles", 1000))
    models = tuple(payload.get("models", ("grm", "linear")))
    for model in models:
        if model not in ("grm", "linear"):
            raise InvalidInputError(f"unknown model kind {model!r}")
    return conditions, replications, base_seed, mif2_config, slice_config, models


def cmd_study(args) -> int:
    with open(args.config) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise InvalidInputError("study config must be a JSON object")
    (conditions, replications, base_seed, mif2_config, slice_config,
     models) = _parse_study_config(payload)
    if payload.get("full_grid"):
        print(f"warning: full grid is {len(conditions)} conditions x "
              f"{replications} replicates; expect many hours per condition",
              file=sys.stderr)
    threads = args.threads or default_threads()
    rows, summary = run_study(conditions, replications, base_seed,
                              out_dir=args.out, threads=threads,
                              mif2_config=mif2_config,
                              slice_config=slice_config, models=models)
    n_failed = sum(1 for r in rows if r["failed"])
    print(f"study complete: {len(rows)} fits ({n_failed} failures) across "
          f"{len(conditions)} conditions; outputs in {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    env_threads = os.environ.get("ORDSS_THREADS", "").strip()
    if env_threads and hasattr(args, "threads"):
        args.threads = max(1, int(env_threads))
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "se": cmd_se,
                "study": cmd_study}
    try:
        return handlers[args.command](args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EstimationFailureError, FilterDegeneracyError) as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OrdssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
