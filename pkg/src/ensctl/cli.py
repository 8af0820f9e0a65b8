"""Command-line driver: ``ensctl check | synth | simulate | network ring``.

Exit codes: 0 success / certified-sufficient, 10 necessary-violated,
20 inconclusive, 30 synthesis unconverged, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import diagnostics as dg
from .expr import ExprSyntaxError
from .model import ModelError, ParametricSystem, TargetProfile, load_model_file, make_grid, sample_ensemble
from .simulation import rollout, sup_error, write_trajectory_csv
from .synthesis import PolynomialControl, SynthesisConfig, control_to_inputs, synthesize
from .zoh import AliasingError, discretize_zoh

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NECESSARY_VIOLATED = 10
EXIT_INCONCLUSIVE = 20
EXIT_UNCONVERGED = 30

CLASSIFICATION_EXIT = {
    dg.CERTIFIED: EXIT_OK,
    dg.NECESSARY_VIOLATED: EXIT_NECESSARY_VIOLATED,
    dg.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# JSON helpers


def _jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    return obj


def dumps(doc: Any) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _file_digest(path: str) -> dict:
    data = Path(path).read_bytes()
    return {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}


def _manifest(args: argparse.Namespace, command: str, inputs: Sequence[str], config: dict, tolerances: dict) -> dict:
    out = {
        "tool": "ensctl",
        "version": __version__,
        "command": command,
        "inputs": [_file_digest(p) for p in inputs],
        "config": config,
        "tolerances": tolerances,
        "seed": getattr(args, "seed", None),
    }
    if not getattr(args, "reproducible", False):
        out["wall_clock"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return out


def _emit(args: argparse.Namespace, doc: dict, summary: str) -> None:
    text = dumps(doc)
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text)
        if args.json:
            sys.stdout.write(text)
        else:
            print(summary)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Argument helpers


def _load(path: str) -> ParametricSystem:
    try:
        return load_model_file(path)
    except OSError as exc:
        raise UsageError(f"cannot read model file {path}: {exc}") from exc


def _grid(system: ParametricSystem, count: int | None, density: float | None):
    return make_grid(system.domain, count=count, density=density)


def _float_list(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in _list_arg(text)]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{what}: expected numbers, got {text!r}") from exc


def _list_arg(text: str) -> list:
    """A JSON list, a path to a JSON list, or comma-separated items."""
    p = Path(text)
    if p.is_file():
        text = p.read_text()
    text = text.strip()
    if text.startswith("["):
        try:
            value = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed JSON list: {exc}") from exc
        if not isinstance(value, list):
            raise UsageError("expected a JSON list")
        return value
    return [t.strip() for t in text.split(",")]


def _target(system: ParametricSystem, text: str | None) -> tuple[TargetProfile, list[str]]:
    if text is None:
        if system.target is None:
            raise UsageError("no --target given and the model has no target")
        from .expr import to_text

        return TargetProfile(exprs=system.target), [to_text(e) for e in system.target]
    items = [str(v) for v in _list_arg(text)]
    if len(items) != system.n:
        raise UsageError(f"target has {len(items)} components, model has n={system.n}")
    try:
        return TargetProfile.from_strings(items, system.d), items
    except ExprSyntaxError as exc:
        raise UsageError(f"target: {exc}") from exc


def _x0(args: argparse.Namespace, n: int) -> np.ndarray | None:
    if args.x0 is None:
        return None
    if args.x0 == "random":
        if args.seed is None:
            raise UsageError("--x0 random needs --seed")
        return np.random.default_rng(args.seed).standard_normal(n)
    x0 = np.asarray(_float_list(args.x0, "--x0"))
    if x0.shape != (n,):
        raise UsageError(f"--x0 must have {n} entries, got {x0.size}")
    return x0


def _tolerances(args: argparse.Namespace) -> dg.Tolerances:
    return dg.Tolerances(rank_tol=args.rank_tol, tol_spec=args.tol_spec, cond_max=args.cond_max)


def _discrete(system: ParametricSystem, ens, h: float | None):
    if system.time_mode == "continuous":
        if h is None:
            raise UsageError("continuous-time model: --zoh-step is required")
        return discretize_zoh(ens, h)
    if h is not None:
        raise UsageError("--zoh-step only applies to continuous-time models")
    return ens


# --------------------------------------------------------------------------
# Commands


def cmd_check(args: argparse.Namespace) -> int:
    system = _load(args.model)
    tol = _tolerances(args)
    grid = _grid(system, args.grid, args.density)
    ens = sample_ensemble(system, grid)
    report = dg.diagnose(ens, system.domain, tol, include_cloud=not args.no_cloud)
    doc = report.to_json()
    if system.network is not None:
        from .network import DecoupleError, NetworkError, check_robust_sync, spec_from_json

        try:
            net = check_robust_sync(spec_from_json(system.network, system.domain), grid, tol)
            doc["network"] = {"robust_sync": net.to_json()}
        except (DecoupleError, NetworkError) as exc:
            doc["network"] = {"error": str(exc)}
    doc["manifest"] = _manifest(
        args,
        "check",
        [args.model],
        {"grid": grid.descriptor(), "grid_count": args.grid, "grid_density": args.density},
        tol.as_dict(),
    )
    _emit(args, doc, f"{report.classification}: {', '.join(report.reasons) or 'no theorem applies'}")
    return CLASSIFICATION_EXIT[report.classification]


def cmd_synth(args: argparse.Namespace) -> int:
    system = _load(args.model)
    target, target_text = _target(system, args.target)
    grid = _grid(system, args.grid, args.density)
    ens = _discrete(system, sample_ensemble(system, grid), args.zoh_step)
    x0 = _x0(args, system.n)
    cfg = SynthesisConfig(
        eps=args.eps,
        max_degree=args.max_degree,
        start_degree=args.start_degree,
        lawson_iters=args.lawson_iters,
        revalidation_factor=args.revalidate_factor,
    )
    ctrl = synthesize(ens, target, cfg, x0=x0)
    traj = rollout(ens, control_to_inputs(ctrl), x0)
    report = sup_error(traj, target, system, args.revalidate_factor)
    doc = ctrl.to_json(grid.descriptor(), {"eps": args.eps})
    doc["grid"] = {"count": args.grid, "density": args.density}
    doc["target"] = target_text
    doc["x0"] = None if x0 is None else x0.tolist()
    doc["error_report"] = report.to_json(include_table=False)
    doc["manifest"] = _manifest(args, "synth", [args.model], {**cfg.as_dict(), "zoh_step": args.zoh_step}, {"eps": args.eps})
    status = "converged" if ctrl.converged else "unconverged"
    _emit(args, doc, f"{status}: T={ctrl.horizon} achieved_error={ctrl.achieved_error:.6g}")
    return EXIT_OK if ctrl.converged else EXIT_UNCONVERGED


def cmd_simulate(args: argparse.Namespace) -> int:
    system = _load(args.model)
    try:
        cdoc = json.loads(Path(args.control).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read control file {args.control}: {exc}") from exc
    try:
        ctrl = PolynomialControl.from_json(cdoc)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"malformed control file: {exc}") from exc
    if ctrl.m != system.m:
        raise UsageError(f"control has {ctrl.m} channels, model has m={system.m}")
    stored = cdoc.get("grid", {})
    count = args.grid if args.grid is not None else stored.get("count")
    density = args.density if args.density is not None else stored.get("density")
    grid = _grid(system, count, density)
    h = args.zoh_step if args.zoh_step is not None else ctrl.zoh_step
    ens = _discrete(system, sample_ensemble(system, grid), h)
    if args.x0 is None and cdoc.get("x0") is not None:
        x0 = np.asarray(cdoc["x0"], dtype=float)
    else:
        x0 = _x0(args, system.n)
    traj = rollout(ens, control_to_inputs(ctrl), x0)
    if args.target is not None or system.target is not None:
        target, _ = _target(system, args.target)
    elif cdoc.get("target") is not None:
        target = TargetProfile.from_strings(cdoc["target"], system.d)
    else:
        raise UsageError("no target: pass --target or use a model/control that records one")
    report = sup_error(traj, target, system, args.revalidate_factor)
    if args.traj:
        write_trajectory_csv(traj, args.traj)
    doc = {
        "error_report": report.to_json(),
        "reported_achieved_error": ctrl.achieved_error,
        "T": ctrl.horizon,
        "zoh_step": h,
        "manifest": _manifest(
            args,
            "simulate",
            [args.model, args.control],
            {"grid": grid.descriptor(), "revalidate_factor": args.revalidate_factor, "zoh_step": h},
            {},
        ),
    }
    _emit(args, doc, f"sup_error={report.sup_error:.6g}")
    return EXIT_OK


def cmd_network_ring(args: argparse.Namespace) -> int:
    from .model import ParameterDomain
    from .network import ring_model_document, ring_spec

    lo, hi = args.interval
    domain = ParameterDomain.intervals((lo, hi))
    node = None
    if args.node:
        try:
            node = json.loads(Path(args.node).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read node file {args.node}: {exc}") from exc
    spec = ring_spec(args.N, domain, args.variant, args.weight, node)
    target = None
    if args.target is not None:
        xs = [str(v) for v in _list_arg(args.target)]
        if len(xs) != spec.n:
            raise UsageError(f"node target must have {spec.n} components")
        target = xs * spec.N
    doc = ring_model_document(spec, args.mode, target)
    text = dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}: N={spec.N} {args.variant}, state dimension {spec.n * spec.N}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write JSON output to this path")
    p.add_argument("--json", action="store_true", help="print JSON on standard output even with --out")
    p.add_argument("--seed", type=int, default=None, help="seed for any randomness (recorded in the manifest)")
    p.add_argument("--reproducible", action="store_true", help="omit the wall-clock timestamp from the manifest")


def _add_grid(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", type=int, default=None, help="points per parameter axis")
    g.add_argument("--density", type=float, default=None, help="grid segments per unit parameter length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensctl", description="Ensemble controllability diagnostics and synthesis.")
    parser.add_argument("--version", action="version", version=f"ensctl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="classify a model (exit 0 certified, 10 violated, 20 inconclusive)")
    p.add_argument("model")
    _add_grid(p)
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.add_argument("--tol-spec", type=float, default=None, help="absolute eigenvalue tolerance (default relative)")
    p.add_argument("--cond-max", type=float, default=1e6)
    p.add_argument("--no-cloud", action="store_true", help="leave the eigenvalue cloud out of the report")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth", help="fit a parameter-independent input (exit 30 if eps is not reached)")
    p.add_argument("model")
    p.add_argument("--target", help="expressions: inline 'a,b', a JSON list, or a file holding one")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--max-degree", type=int, default=60)
    p.add_argument("--start-degree", type=int, default=0)
    p.add_argument("--lawson-iters", type=int, default=300)
    p.add_argument("--zoh-step", type=float, default=None)
    p.add_argument("--x0", default=None, help="initial state: inline list, JSON file, or 'random' with --seed")
    p.add_argument("--revalidate-factor", type=int, default=4)
    _add_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="replay a control file and audit the final-state error")
    p.add_argument("model")
    p.add_argument("--control", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--x0", default=None)
    p.add_argument("--traj", default=None, help="write the trajectory CSV here")
    p.add_argument("--zoh-step", type=float, default=None)
    p.add_argument("--revalidate-factor", type=int, default=4)
    _add_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("network", help="network model construction")
    nsub = p.add_subparsers(dest="network_command", required=True)
    r = nsub.add_parser("ring", help="emit the model file of a ring of identical nodes")
    r.add_argument("--N", type=int, default=5)
    r.add_argument("--variant", choices=["directed-ring", "symmetric-ring"], default="directed-ring")
    r.add_argument("--interval", type=float, nargs=2, default=(2.0, 3.0), metavar=("LO", "HI"))
    r.add_argument("--weight", default="theta")
    r.add_argument("--mode", choices=["continuous", "discrete"], default="continuous")
    r.add_argument("--node", default=None, help="JSON file with node A, b, c (default harmonic oscillator)")
    r.add_argument("--target", default=None, help="node-level target, copied to every node")
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_network_ring)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ModelError, AliasingError, ValueError, OSError) as exc:
        print(f"ensctl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
