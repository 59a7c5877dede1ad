"""Command-line entry point ``relu-landscape``.

Exit codes: 0 success (all enforced checks pass), 1 a tolerance check failed,
2 bad input (unreadable file, schema violation, dimension mismatch).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments
from .geometry import Box, enumerate_cells
from .measures import MinimizerError, ProblemInstance, QuadratureGrid, eval_error, pointwise_minimizer
from .networks import NetworkConfig, network_from_json, network_to_json, tuple_from_json
from .responses import response_from_json
from .training import Schedule, multistart_min, random_network, subgradient_descent

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_tagged = {"type": "object", "required": ["id"], "properties": {"id": {"type": "string"}}}

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["d_in", "box", "density", "loss"],
    "properties": {
        "d_in": {"type": "integer", "minimum": 1},
        "box": {"type": "object", "required": ["lo", "hi"], "properties": {"lo": _vec, "hi": _vec}},
        "density": _tagged,
        "loss": _tagged,
        "target": _tagged,
        "label": {"type": "string"},
    },
}

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["d_in", "d", "w1", "w2", "bias"],
    "properties": {
        "d_in": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 0},
        "w1": {"type": "array", "items": _vec},
        "w2": {"type": "array", "items": {"type": "number"}},
        "bias": _vec,
    },
}

TUPLE_SCHEMA = {
    "type": "object",
    "required": ["neurons", "background"],
    "properties": {
        "neurons": {"type": "array", "items": {
            "type": "object", "required": ["normal", "offset", "kink"],
            "properties": {"normal": _vec, "offset": {"type": "number"}, "kink": {"type": "number"}}}},
        "background": {"type": "object", "required": ["linear", "const"],
                       "properties": {"linear": _vec, "const": {"type": "number"}}},
    },
}

RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["background", "terms"],
    "properties": {
        "background": {"type": "object", "required": ["linear", "const"],
                       "properties": {"linear": _vec, "const": {"type": "number"}}},
        "terms": {"type": "array", "items": {
            "type": "object", "required": ["normal", "offset", "delta", "intercept"],
            "properties": {"normal": _vec, "offset": {"type": "number"}, "delta": _vec,
                           "intercept": {"type": "number"}, "multiplicity": {"enum": [1, 2]}}}},
    },
}


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of a JSON path such as ``['terms', 0, 'normal']``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    pos = 0
    for key in keys:
        found = text.find(f'"{key}"', pos)
        if found < 0:
            return None
        pos = found
    return text.count("\n", 0, pos) + 1


def load_json(path, schema: dict | None = None, what: str = "input") -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read {what}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if schema is not None:
        errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(obj), key=lambda e: list(e.path))
        if errors:
            err = errors[0]
            loc = "/".join(str(p) for p in err.path) or "<root>"
            line = _line_of(text, err.path)
            prefix = f"{path}:{line}" if line else str(path)
            raise InputError(f"{prefix}: {what} schema violation at {loc}: {err.message}")
    return obj


def load_instance(path) -> ProblemInstance:
    obj = load_json(path, INSTANCE_SCHEMA, "instance")
    try:
        return ProblemInstance.from_json(obj)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid instance: {exc}") from exc


def load_response(path):
    """A network, an effective tuple or a generalized response, told apart by their keys."""
    obj = load_json(path, None, "response")
    if not isinstance(obj, dict):
        raise InputError(f"{path}: response must be a JSON object")
    if "w1" in obj:
        schema, build = NETWORK_SCHEMA, network_from_json
    elif "neurons" in obj:
        schema, build = TUPLE_SCHEMA, tuple_from_json
    else:
        schema, build = RESPONSE_SCHEMA, response_from_json
    load_json(path, schema, "response")
    try:
        return build(obj)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid response: {exc}") from exc


def _response_dim(resp) -> int:
    return resp.d_in if hasattr(resp, "d_in") else resp.background.linear.shape[0]


def _grid(args, box: Box) -> QuadratureGrid:
    if getattr(args, "grid_config", None):
        return QuadratureGrid.from_config(box, load_json(args.grid_config, None, "grid config"))
    if getattr(args, "grid", None):
        return QuadratureGrid.tensor_midpoint(box, args.grid)
    return QuadratureGrid.default(box)


def _add_grid_flags(p):
    p.add_argument("--grid", type=int, help="tensor midpoint points per axis (default: built-in)")
    p.add_argument("--grid-config", help="JSON grid config with scheme, resolution, refine, finest")


def _stderr(msg: str):
    print(msg, file=sys.stderr)


# --- subcommands ------------------------------------------------------------

def cmd_eval(args) -> int:
    inst = load_instance(args.instance)
    resp = load_response(args.response)
    if _response_dim(resp) != inst.d_in:
        raise InputError(f"response has d_in = {_response_dim(resp)} but the instance has d_in = {inst.d_in}")
    grid = _grid(args, inst.box)
    err = eval_error(resp, inst, grid)
    print(json.dumps({"err": err, "grid": grid.meta}))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = load_json(args.config, None, "config") if args.config else experiments.load_config(args.experiment)
    runner = experiments.RUNNERS[args.experiment]
    report = runner(cfg, args.seed, args.out_dir, plots=not args.no_plots, log=_stderr)
    for c in report["checks"]:
        tag = "PASS" if c["passed"] else "FAIL"
        note = "" if c["enforced"] else " (not enforced)"
        _stderr(f"{tag} {c['name']}{note}")
    print(json.dumps({"experiment": report["experiment"], "passed": report["passed"],
                      "report": str(Path(args.out_dir) / "report.json")}))
    return EXIT_OK if report["passed"] else EXIT_TOLERANCE


def cmd_cells(args) -> int:
    resp = load_response(args.response)
    if not hasattr(resp, "terms"):
        raise InputError("cells needs a generalized response (an object with 'terms')")
    try:
        box = Box(args.lo, args.hi)
    except ValueError as exc:
        raise InputError(f"bad box: {exc}") from exc
    if box.dim != _response_dim(resp):
        raise InputError(f"box has dimension {box.dim} but the response has d_in = {_response_dim(resp)}")
    cells = enumerate_cells([t.halfspace for t in resp.terms], box, seed=args.seed)
    print("cell,included,witness")
    for i, c in enumerate(cells):
        inc = " ".join(str(j) for j in sorted(c.included))
        wit = " ".join(repr(float(v)) for v in c.witness)
        print(f"{i},{inc},{wit}")
    return EXIT_OK


def cmd_train(args) -> int:
    inst = load_instance(args.instance)
    grid = _grid(args, inst.box)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        schedule = Schedule(args.step_size, args.schedule, args.decay)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if args.restarts > 1:
        res = multistart_min(inst, args.d, args.restarts, args.steps, grid, seed=args.seed,
                             schedule=schedule, polish=not args.no_polish)
        rec, W, err = res.record, res.network, res.err
    else:
        if args.init:
            W0 = load_response(args.init)
            if not isinstance(W0, NetworkConfig) or W0.d_in != inst.d_in:
                raise InputError("--init must be a network file matching the instance dimension")
        else:
            W0 = random_network(np.random.default_rng(args.seed), inst.d_in, args.d)
        rec = subgradient_descent(inst, W0, schedule, args.steps, grid,
                                  diverge_threshold=args.diverge_threshold, window=args.window,
                                  stop_on_divergence=not args.keep_going, seed=args.seed)
        W, err = rec.final, rec.errs[-1]
    rec.write_csv(out / "train.csv")
    rec.write_metadata(out / "train.json", restarts=args.restarts, best_err=err)
    with open(out / "network.json", "w") as fh:
        json.dump(network_to_json(W), fh, indent=2)
        fh.write("\n")
    print(json.dumps({"err": err, "verdict": rec.verdict, "norm_inf": W.norm_inf()}))
    return EXIT_OK


def cmd_improve(args) -> int:
    inst = load_instance(args.instance)
    R = load_response(args.response)
    if not hasattr(R, "terms"):
        raise InputError("improve needs a generalized response (an object with 'terms')")
    if _response_dim(R) != inst.d_in:
        raise InputError(f"response has d_in = {_response_dim(R)} but the instance has d_in = {inst.d_in}")
    try:
        case, base, rows = experiments.kappa_rows(R, inst, _grid(args, inst.box), args.kappas, args.term)
    except (ValueError, IndexError) as exc:
        raise InputError(str(exc)) from exc
    print(f"# case={case} base_err={base!r}")
    print("kappa,diff,scaled_diff")
    for r in rows:
        print(f"{r['kappa']!r},{r['diff']!r},{r['scaled_diff']!r}")
    return EXIT_OK if all(r["diff"] < 0 for r in rows) else EXIT_TOLERANCE


def cmd_minimizer(args) -> int:
    inst = load_instance(args.instance)
    if inst.d_in > 2:
        raise InputError("minimizer dumps are limited to d_in <= 2")
    grid = QuadratureGrid.tensor_midpoint(inst.box, args.resolution)
    try:
        m = pointwise_minimizer(inst, grid.nodes, tol=args.tol)
    except MinimizerError as exc:
        _stderr(f"minimizer failed: {exc}")
        return EXIT_TOLERANCE
    out = Path(args.out)
    cols = [f"x{i + 1}" for i in range(inst.d_in)]
    experiments.write_rows(out, cols + ["m"], ([*map(float, x), float(v)] for x, v in zip(grid.nodes, m)))
    if args.plot:
        from .plotting import plot_minimizer
        plot_minimizer(grid.nodes, m, out.with_suffix(".png"))
    print(json.dumps({"points": int(grid.size), "out": str(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relu-landscape",
                                 description="Shallow ReLU network landscapes: errors, approximants, descent.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="error of a network, tuple or generalized response on an instance")
    p.add_argument("instance")
    p.add_argument("response")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="run a shipped experiment and write CSV, figures and report.json")
    p.add_argument("experiment", choices=sorted(experiments.EXPERIMENTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--config", help="override the shipped config")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("cells", help="nonempty cells of a response's half-space arrangement in a box")
    p.add_argument("response")
    p.add_argument("--lo", type=float, nargs="+", required=True)
    p.add_argument("--hi", type=float, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cells)

    p = sub.add_parser("train", help="subgradient descent (or multistart search) at a fixed width")
    p.add_argument("instance")
    p.add_argument("--d", type=int, required=True, help="hidden width")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--step-size", type=float, default=1e-3)
    p.add_argument("--schedule", choices=["constant", "inverse_sqrt", "inverse"], default="constant")
    p.add_argument("--decay", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", help="network JSON to start from (single run only)")
    p.add_argument("--diverge-threshold", type=float, default=50.0)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--keep-going", action="store_true", help="do not stop at a divergence verdict")
    p.add_argument("--no-polish", action="store_true", help="skip pattern search after multistart descent")
    p.add_argument("--out-dir", default="train_out")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("improve", help="kappa table for replacing a discontinuous term by a continuous family")
    p.add_argument("instance")
    p.add_argument("response")
    p.add_argument("--term", type=int, default=-1)
    p.add_argument("--kappas", type=float, nargs="+", default=[25.0, 50.0, 100.0, 200.0])
    _add_grid_flags(p)
    p.set_defaults(func=cmd_improve)

    p = sub.add_parser("minimizer", help="dump the pointwise loss minimizer on a tensor grid")
    p.add_argument("instance")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default="minimizer.csv")
    p.add_argument("--plot", action="store_true", help="also write a PNG next to the CSV")
    p.set_defaults(func=cmd_minimizer)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _stderr(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
