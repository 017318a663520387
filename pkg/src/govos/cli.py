"""Command-line driver: ``govos segment | synth | eval | oracle-check``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import media_io as mio
from .metrics import evaluate
from .oracle import SizeCapError
from .solver import SolverConfig, binarize, finalize_mask, run

log = logging.getLogger("govos")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


class _Stage:
    """Context manager that times a stage and tags any failure with its name."""

    def __init__(self, name: str, timings: dict):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# --------------------------------------------------------------------------
# configuration

# flag name -> (SolverConfig field, parser)
_CONFIG_KEYS = {
    "iterations": ("iterations", int),
    "radius": ("radius", int),
    "sigma-k": ("sigma_k", float),
    "beta": ("beta", float),
    "tol": ("tol", float),
    "init": ("init", str),
    "init-sigma": ("init_sigma", float),
    "seed": ("seed", int),
    "regression": ("regression", lambda s: s.replace("-", "_")),
    "chain-steps": ("chain_steps", int),
    "channels": ("channels", lambda s: tuple(c.strip() for c in s.split(",") if c.strip())),
    "color-mode": ("color_mode", lambda s: s.replace("-", "_")),
    "threshold": ("threshold", float),
    "deterministic": ("deterministic", lambda s: _on_off(s)),
    "standardize": ("standardize", lambda s: _on_off(s)),
    "bias": ("bias", lambda s: _on_off(s)),
}
_PATH_KEYS = ("frames", "flow-fwd", "flow-bwd", "out", "prob-maps", "init-maps")


def _on_off(s) -> bool:
    if isinstance(s, bool):
        return s
    s = str(s).strip().lower()
    if s in ("on", "true", "1", "yes"):
        return True
    if s in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment; keys match the long flags."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("_", "-")
            if key not in _CONFIG_KEYS and key not in _PATH_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val
    return values


def resolve_settings(args) -> tuple[SolverConfig, dict]:
    """Merge defaults < config file < command-line flags."""
    file_values = read_config_file(args.config) if args.config else {}
    fields = {}
    for key, (name, parse) in _CONFIG_KEYS.items():
        cli_val = getattr(args, key.replace("-", "_"), None)
        if cli_val is not None:
            fields[name] = parse(cli_val) if isinstance(cli_val, str) else cli_val
        elif key in file_values:
            fields[name] = parse(file_values[key])
    paths = {}
    for key in _PATH_KEYS:
        cli_val = getattr(args, key.replace("-", "_"), None)
        paths[key] = cli_val if cli_val is not None else file_values.get(key)
    return SolverConfig(**fields), paths


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--sigma-k", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--init", choices=["gaussian", "uniform", "random", "external"])
    p.add_argument("--init-sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--regression", choices=["per-frame", "global"])
    p.add_argument("--chain-steps", type=int)
    p.add_argument("--channels", help="comma list of motion,color,prob")
    p.add_argument("--color-mode", choices=["node-only", "along-chain"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--deterministic", choices=["on", "off"])
    p.add_argument("--standardize", choices=["on", "off"])
    p.add_argument("--bias", choices=["on", "off"])
    p.add_argument("--config", help="key=value config file")


def _frame_files(path) -> list:
    files = mio.list_dir(path, "ppm") + mio.list_dir(path, "pgm")
    return sorted(files, key=os.path.basename)


def _require(paths: dict, key: str):
    if not paths.get(key):
        raise ValueError(f"--{key} is required")
    return paths[key]


# --------------------------------------------------------------------------
# commands


def cmd_segment(args) -> int:
    t_start = time.perf_counter()
    timings: dict = {}
    with _Stage("config", timings):
        config, paths = resolve_settings(args)
        out = _require(paths, "out")
    with _Stage("ingest", timings):
        video = mio.read_frames(_frame_files(_require(paths, "frames")))
        flows = mio.read_flow_set(mio.list_dir(_require(paths, "flow-fwd"), "flo"),
                                  mio.list_dir(_require(paths, "flow-bwd"), "flo"))
        flows.check_matches(video)
        prob_maps = None
        if paths.get("prob-maps"):
            prob_maps = mio.read_probability_maps(mio.list_dir(paths["prob-maps"], "pgm"), video)
        init_maps = None
        if config.init == "external":
            init_maps = mio.read_probability_maps(mio.list_dir(_require(paths, "init-maps"), "pgm"), video)
    with _Stage("run", timings):
        solved, diag = run(video, flows, config, prob_maps, init_maps)
        soft = finalize_mask(solved)
        hard = binarize(soft, config.threshold)
    with _Stage("write", timings):
        for sub in ("soft", "binary"):
            os.makedirs(os.path.join(out, sub), exist_ok=True)
        for t in range(video.m):
            mio.write_mask_pgm(soft[t], os.path.join(out, "soft", mio.frame_name(t, "pgm")))
            mio.write_mask_pgm(hard[t], os.path.join(out, "binary", mio.frame_name(t, "pgm")))
    timings["total"] = time.perf_counter() - t_start
    with _Stage("manifest", {}):
        manifest = {
            "config": config.to_dict(),
            "inputs": {k: paths[k] for k in _PATH_KEYS if k != "out"},
            "out": out,
            "seed": config.seed,
            "deterministic": config.deterministic,
            "nodes": video.n,
            "iterations_run": len(diag.direction_change),
            "direction_change": diag.direction_change,
            "min_value": diag.min_value,
            "timings": timings,
            "run_breakdown": diag.timings,
        }
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    log.info("wrote %d soft and binary masks to %s", video.m, out)
    return 0


def cmd_synth(args) -> int:
    timings: dict = {}
    with _Stage("synth", timings):
        if args.desk_seed is not None:
            spec = mio.desk_spec(args.desk_seed, args.m, args.height, args.width, args.size)
        else:
            spec = mio.SynthSpec(
                m=args.m, h=args.height, w=args.width, shape=args.shape, size=args.size,
                velocity=tuple(args.velocity), background_velocity=tuple(args.bg_velocity),
                seed=args.seed, channels=1 if args.grey else 3,
            )
        video, flows, gt = mio.synth_sequence(spec)
    with _Stage("write", timings):
        mio.write_sequence(args.out, video, flows, gt)
    return 0


def _read_masks(path) -> list:
    files = mio.list_dir(path, "pgm")
    return [mio.read_netpbm(f)[..., 0] >= 128 for f in files]


def cmd_eval(args) -> int:
    timings: dict = {}
    with _Stage("ingest", timings):
        preds = _read_masks(args.pred)
        if not preds:
            raise ValueError(f"no prediction masks in {args.pred}")
        gt_masks = _read_masks(args.gt) if args.gt else None
        gt_boxes = None
        if args.gt_boxes:
            with open(args.gt_boxes) as fh:
                gt_boxes = [None if b is None else tuple(b) for b in json.load(fh)]
        if gt_masks is None and gt_boxes is None:
            raise ValueError("need --gt or --gt-boxes")
    with _Stage("eval", timings):
        report = evaluate(preds, gt_masks, gt_boxes, args.theta)
    with _Stage("write", timings):
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(report.to_json())
        sys.stdout.write(report.to_text())
    return 0


def cmd_oracle_check(args) -> int:
    from .checks import run_checks

    timings: dict = {}
    with _Stage("ingest", timings):
        config, paths = resolve_settings(args)
        if paths.get("frames"):
            video = mio.read_frames(_frame_files(paths["frames"]))
            flows = mio.read_flow_set(mio.list_dir(_require(paths, "flow-fwd"), "flo"),
                                      mio.list_dir(_require(paths, "flow-bwd"), "flo"))
            init_maps = None
        else:
            spec = mio.SynthSpec(m=args.m, h=args.size_hw, w=args.size_hw, size=max(1, args.size_hw // 3),
                                 velocity=(1.0, 0.0), background_velocity=(0.0, -1.0), seed=0)
            video, flows, gt = mio.synth_sequence(spec)
            init_maps = gt.masks.astype(np.float64)
        if video.n > args.max_nodes:
            raise SizeCapError(f"n = {video.n} exceeds the oracle cap of {args.max_nodes}")
    with _Stage("oracle", timings):
        results = run_checks(video, flows, config, seed=config.seed, init_maps=init_maps,
                             cap=args.max_nodes)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="govos", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a video from frames and flows")
    p.add_argument("--frames")
    p.add_argument("--flow-fwd")
    p.add_argument("--flow-bwd")
    p.add_argument("--out")
    p.add_argument("--prob-maps", help="directory of per-frame P5 foreground probabilities")
    p.add_argument("--init-maps", help="directory of P5 masks for --init external")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("synth", help="write a synthetic sequence with exact flows")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--shape", choices=["square", "disc"], default="square")
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--velocity", type=float, nargs=2, default=(1.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--bg-velocity", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grey", action="store_true")
    p.add_argument("--desk-seed", type=int, help="use the seeded desk benchmark layout")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score binary masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt")
    p.add_argument("--gt-boxes", help="JSON list of [x0, y0, x1, y1] or null per frame")
    p.add_argument("--theta", type=int)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="verify the solver against dense matrices")
    p.add_argument("--frames")
    p.add_argument("--flow-fwd")
    p.add_argument("--flow-bwd")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--size-hw", type=int, default=8, help="frame side of the generated instance")
    p.add_argument("--max-nodes", type=int, default=20_000)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_oracle_check, out=None, prob_maps=None, init_maps=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
