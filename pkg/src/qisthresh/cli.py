"""Command-line front end: simulate, reconstruct, adapt, analyze, hdr, bench.

Every output file gets a JSON sidecar (``<file>.json``) holding the resolved
parameters and their SHA-256, so an artifact can be traced to the exact run
that produced it.  Exit codes: 0 ok, 1 invalid input, 2 I/O, 3 numerical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analytics, bench, corpus, hdr, imageio
from .adaptation import AdaptationReport, adapt_and_reconstruct, checkerboard_map
from .forward import Kernel, SensorConfig, ThresholdMap, default_gain, expose, sample_bits
from .reconstruction import mle_reconstruct
from .special import psi_upper_tail

log = logging.getLogger("qisthresh")

SEED_ENV = "QISTHRESH_SEED"
EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

# arguments that name files; left out of the config hash
_PATH_KEYS = {"config", "out", "out_csv", "out_pgm", "out_map", "out_trace", "out_recon", "image",
              "bits", "meta", "qmap", "truth", "radiance", "corpus_dir"}
# affect how a run executes, never what it produces
_EXECUTION_KEYS = {"workers", "verbose"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------
def parse_k(text: str) -> tuple[int, int]:
    """'2x2' -> (2, 2); a bare '4' means 2x2 only if it is a perfect square."""
    text = text.strip().lower()
    if "x" in text:
        a, b = text.split("x", 1)
        kx, ky = int(a), int(b)
    else:
        k = int(text)
        r = math.isqrt(k)
        if r * r != k:
            raise argparse.ArgumentTypeError(f"K={k} is not square; give it as KXxKY")
        kx = ky = r
    if kx < 1 or ky < 1:
        raise argparse.ArgumentTypeError("jot factors must be positive")
    return kx, ky


def parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_int_range(text: str) -> list[int]:
    """'1-16' or '3,5,9'."""
    if "-" in text and "," not in text:
        a, b = text.split("-", 1)
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_VALIDATION) from None


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------
def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; dashes in keys become underscores."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value", EXIT_VALIDATION)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def config_hash(params: dict) -> str:
    blob = json.dumps(_jsonable(params), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Kernel):
        return v.value
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def experiment_params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _PATH_KEYS | _EXECUTION_KEYS and k != "func"}


def write_sidecar(path, args, extra: dict | None = None) -> None:
    params = experiment_params(args)
    meta = {"command": args.command, "params": params, "config_sha256": config_hash(params)}
    if extra:
        meta.update(extra)
    text = json.dumps(_jsonable(meta), sort_keys=True, indent=2) + "\n"
    Path(str(path) + ".json").write_text(text, newline="\n")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def load_image(path) -> np.ndarray:
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return imageio.read_pgm(p)
    if p.suffix.lower() == ".csv":
        return imageio.read_csv_image(p)
    raise CliError(f"{path}: unsupported image type (use .pgm or .csv)", EXIT_VALIDATION)


def sensor_config(args) -> SensorConfig:
    kx, ky = args.k
    alpha = args.alpha if args.alpha is not None else default_gain(kx * ky, args.q_max)
    return SensorConfig(alpha=alpha, kx=kx, ky=ky, T=args.t, q_max=args.q_max, tau=args.tau, seed=args.seed)


def _threshold_map(args, config: SensorConfig, pixel_shape) -> ThresholdMap:
    if getattr(args, "qmap", None):
        qmap = imageio.read_threshold_map(args.qmap)
    else:
        q = args.q
        if q is None:
            raise CliError("give --q or --qmap", EXIT_VALIDATION)
        qmap = ThresholdMap.per_pixel(np.full(pixel_shape, q), config)
    jots = (pixel_shape[0] * config.ky, pixel_shape[1] * config.kx)
    if qmap.jot_shape != jots:
        raise CliError(f"threshold map covers {qmap.jot_shape} jots, sensor has {jots}", EXIT_VALIDATION)
    qmap.check_range(config.q_max)
    return qmap


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = sensor_config(args)
    image = load_image(args.image)
    if np.any(image < 0) or np.any(image > 1):
        raise CliError("image values must lie in [0, 1]", EXIT_VALIDATION)
    qmap = _threshold_map(args, cfg, image.shape)
    theta = expose(image, cfg, args.kernel)
    cube = sample_bits(theta, qmap, cfg.T, cfg.seed)
    imageio.write_qisb(args.out, cube)
    write_sidecar(args.out, args, {"jot_shape": list(cube.jot_shape), "image_shape": list(image.shape)})
    log.info("wrote %s (%d frames, %d jots)", args.out, cube.T, cube.M)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    meta_path = args.meta or str(args.bits) + ".json"
    try:
        meta = json.loads(Path(meta_path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read metadata {meta_path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{meta_path}: bad JSON ({exc})", EXIT_VALIDATION) from exc
    sim = meta.get("params", {})
    for key in ("alpha", "k", "t", "q_max", "tau"):
        if getattr(args, key) is None and key in sim:
            setattr(args, key, tuple(sim[key]) if key == "k" else sim[key])
    if args.q is None and not args.qmap:
        args.q = sim.get("q")
    cube = imageio.read_qisb(args.bits, tuple(meta["jot_shape"]))
    cfg = sensor_config(args).replace(T=cube.T)
    pixel_shape = (cube.jot_shape[0] // cfg.ky, cube.jot_shape[1] // cfg.kx)
    qmap = _threshold_map(args, cfg, pixel_shape)
    truth = load_image(args.truth) if args.truth else None
    res = mle_reconstruct(cube, qmap, cfg, clip=args.clip, truth=truth)
    extra = {"saturated_pixels": int(res.saturation_mask.sum())}
    if res.psnr_db is not None:
        extra["psnr_db"] = res.psnr_db if math.isfinite(res.psnr_db) else "inf"
        print(f"PSNR {res.psnr_db:.4f} dB")
    if args.out_pgm:
        imageio.write_pgm(args.out_pgm, res.estimate)
        write_sidecar(args.out_pgm, args, extra)
    if args.out_csv:
        imageio.write_csv_image(args.out_csv, res.raw_estimate)
        write_sidecar(args.out_csv, args, extra)
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = sensor_config(args)
    image = load_image(args.image)
    report, res = adapt_and_reconstruct(
        image, cfg, args.granularity, adapt_frames=args.adapt_frames, tol=args.tol,
        kernel=args.kernel, accumulate=args.accumulate,
    )
    extra = {
        "adapt_frames": report.adapt_frames,
        "recon_frames": report.recon_frames,
        "mse_to_oracle": report.mse,
        "psnr_db": res.psnr_db if math.isfinite(res.psnr_db) else "inf",
    }
    imageio.write_threshold_map(args.out_map, report.qmap)
    write_sidecar(args.out_map, args, extra)
    if args.out_trace:
        imageio.write_table(args.out_trace, AdaptationReport.TRACE_HEADER, report.trace)
        write_sidecar(args.out_trace, args, extra)
    if args.out_recon:
        imageio.write_pgm(args.out_recon, res.estimate)
        write_sidecar(args.out_recon, args, extra)
    print(f"PSNR {res.psnr_db:.4f} dB after {report.adapt_frames} adaptation frames")
    return EXIT_OK


def _snr_rows(cfg: SensorConfig, cs, qs):
    for c in cs:
        for q in qs:
            val = float(analytics.log_snr(c, q, cfg))
            if not math.isfinite(val):
                continue
            yield (c, q, 10.0 * val / analytics.LN10, analytics.fisher_information(c, q, cfg),
                   analytics.snr_lower_bound(c, q, cfg))


def cmd_analyze(args) -> int:
    cfg = sensor_config(args)
    if args.table == "snr":
        cs = np.round(np.arange(args.c_min, args.c_max + args.grid_step / 2, args.grid_step), 12)
        qs = args.q_range or list(range(1, cfg.q_max + 1))
        rows = list(_snr_rows(cfg, cs, qs))
        if not rows:
            raise analytics.DegenerateThresholdError("every (c, q) pair in the table is degenerate")
        imageio.write_table(args.out, ["c", "q", "snr_db", "fisher", "lower_bound"], rows)
    elif args.table == "phase":
        qs = args.q_range or list(range(1, cfg.q_max + 1))
        rows = analytics.phase_transition_curve(args.c, cfg, qs, args.delta)
        imageio.write_table(
            args.out, ["q", "e_chat_ratio", "bit_density", "snr_db", "admissible"],
            [(r.q, r.e_chat_ratio, r.bit_density, r.snr_db, r.admissible) for r in rows],
        )
    elif args.table == "crlb":
        J = analytics.checkerboard_objectives(cfg, args.c_min, args.c_max, args.grid_step)
        design = analytics.checkerboard_design(cfg, args.c_min, args.c_max, args.grid_step)
        rows = [(q1, q2, J[q1 - 1, q2 - 1]) for q1 in range(1, cfg.q_max + 1) for q2 in range(q1, cfg.q_max + 1)]
        imageio.write_table(args.out, ["q1", "q2", "objective"], rows)
        print(f"checkerboard design q1={design.q1} q2={design.q2}")
    elif args.table == "density":
        thetas = np.round(np.arange(args.c_min, args.c_max + args.grid_step / 2, args.grid_step), 12)
        rows = [(th, int(th) + 1, psi_upper_tail(int(th) + 1, th)) for th in thetas]
        imageio.write_table(args.out, ["theta", "q_star", "bit_density"], rows)
    elif args.table == "dr":
        thetas = hdr.default_theta_grid()
        taus = args.taus or list(hdr.DEFAULT_TAUS)
        policies = ["oracle", 1, cfg.q_max]
        curves = [hdr.dynamic_range_curve(cfg, taus, p, thetas) for p in policies]
        imageio.write_table(
            args.out, ["theta", "snr_db_oracle", "snr_db_q1", f"snr_db_q{cfg.q_max}"],
            [(th, *(c[i] for c in curves)) for i, th in enumerate(thetas)],
        )
        for base in (1, cfg.q_max):
            gain = hdr.dynamic_range_gain(cfg, taus, base, thetas, args.floor_db)
            print(f"dynamic-range gain vs q={base}: {gain:.2f} dB")
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown table {args.table}", EXIT_VALIDATION)
    write_sidecar(args.out, args)
    return EXIT_OK


def cmd_hdr(args) -> int:
    cfg = sensor_config(args)
    radiance = imageio.read_csv_image(args.radiance)
    policy = args.policy if args.policy in ("adapted", "oracle") else int(args.policy)
    taus = args.taus or list(hdr.DEFAULT_TAUS)
    stack = hdr.simulate_stack(radiance, cfg, taus, policy, args.granularity, args.adapt_frames, args.kernel)
    result = hdr.fuse(stack, args.decades)
    extra = {
        "fallback_pixels": int(result.fallback.sum()),
        "psnr_db": result.psnr_db if result.psnr_db is None or math.isfinite(result.psnr_db) else "inf",
    }
    imageio.write_csv_image(args.out_csv, result.fused)
    write_sidecar(args.out_csv, args, extra)
    if args.out_pgm:
        peak = float(radiance.max()) or 1.0
        imageio.write_pgm(args.out_pgm, hdr.tone_map(result.fused, peak, args.decades))
        write_sidecar(args.out_pgm, args, extra)
    if result.psnr_db is not None:
        print(f"tone-mapped PSNR {result.psnr_db:.4f} dB")
    return EXIT_OK


def _load_corpus(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{directory}: not a directory", EXIT_IO)
    images = {p.stem: load_image(p) for p in sorted(d.iterdir()) if p.suffix.lower() in (".pgm", ".csv")}
    if not images:
        raise CliError(f"{directory}: no .pgm or .csv images", EXIT_VALIDATION)
    return images


def cmd_bench(args) -> int:
    cfg = sensor_config(args)
    images = _load_corpus(args.corpus_dir) if args.corpus_dir else corpus.default_corpus()
    seeds = range(args.seed, args.seed + args.seeds)
    policies, scores = bench.run_bench(images, cfg, seeds, adapt_frames=args.adapt_frames, workers=args.workers)
    rows = bench.summarize(policies, scores)
    imageio.write_table(args.out, bench.BENCH_HEADER, rows)
    write_sidecar(args.out, args, {"images": sorted(images)})
    for method, conf, mean, std in rows:
        print(f"{method:18s} {conf:14s} {mean:7.2f} +/- {std:.2f}")
    return EXIT_OK


def cmd_checkerboard(args) -> int:
    cfg = sensor_config(args)
    design = analytics.checkerboard_design(cfg, args.c_min, args.c_max, args.grid_step)
    w, h = args.pixels
    imageio.write_threshold_map(args.out, checkerboard_map(design, (h, w), cfg))
    write_sidecar(args.out, args, {"q1": design.q1, "q2": design.q2, "objective": design.objective})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def _sensor_args(p: argparse.ArgumentParser, q_max: int = 16, t: int = 25) -> None:
    p.add_argument("--alpha", type=float, default=None, help="sensor gain (default K*(q_max-1))")
    p.add_argument("--k", type=parse_k, default=(2, 2), help="jots per pixel as KXxKY")
    p.add_argument("--t", type=int, default=t, help="frames")
    p.add_argument("--q-max", type=int, default=q_max)
    p.add_argument("--tau", type=float, default=1.0, help="duty cycle in (0, 1]")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default ${SEED_ENV} or 0)")
    p.add_argument("--kernel", type=Kernel.parse, default=Kernel.BOXCAR,
                   help="boxcar, linear-bspline, quadratic-bspline or cubic-bspline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qisthresh", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="image -> QISB bit cube")
    _sensor_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--q", type=int, help="uniform threshold")
    p.add_argument("--qmap", help="threshold map file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="QISB bit cube -> ML image")
    _sensor_args(p)
    for key in ("alpha", "k", "t", "q_max", "tau"):
        p.set_defaults(**{key: None})  # inherited from the cube's metadata
    p.add_argument("--bits", required=True)
    p.add_argument("--meta", help="metadata JSON (default <bits>.json)")
    p.add_argument("--q", type=int)
    p.add_argument("--qmap")
    p.add_argument("--truth", help="ground-truth image for PSNR")
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--out-pgm")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("adapt", help="bisection threshold adaptation")
    _sensor_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--granularity", type=int, default=1, help="pixels per block side")
    p.add_argument("--adapt-frames", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--accumulate", type=parse_bool, default=False)
    p.add_argument("--out-map", required=True)
    p.add_argument("--out-trace")
    p.add_argument("--out-recon")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("analyze", help="analytic tables")
    _sensor_args(p)
    p.add_argument("--table", choices=["snr", "phase", "crlb", "density", "dr"], required=True)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--c-min", type=float, default=0.01)
    p.add_argument("--c-max", type=float, default=1.0)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--q-range", type=parse_int_range, default=None)
    p.add_argument("--delta", type=float, default=2e-4)
    p.add_argument("--taus", type=parse_float_list, default=None)
    p.add_argument("--floor-db", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("hdr", help="multi-exposure HDR fusion")
    _sensor_args(p, q_max=25)
    p.add_argument("--radiance", required=True, help="CSV of nonnegative radiance")
    p.add_argument("--taus", type=parse_float_list, default=None)
    p.add_argument("--policy", default="adapted", help="adapted, oracle or an integer q")
    p.add_argument("--granularity", type=int, default=1)
    p.add_argument("--adapt-frames", type=int, default=None)
    p.add_argument("--decades", type=float, default=4.0)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-pgm")
    p.set_defaults(func=cmd_hdr)

    p = sub.add_parser("bench", help="corpus PSNR table")
    _sensor_args(p, q_max=16, t=13)
    p.set_defaults(k=(4, 4))
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--corpus-dir")
    p.add_argument("--adapt-frames", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("checkerboard", help="two-threshold checkerboard map")
    _sensor_args(p)
    p.add_argument("--c-min", type=float, default=0.01)
    p.add_argument("--c-max", type=float, default=1.0)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--pixels", type=parse_k, required=True, help="map size as WxH pixels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_checkerboard)
    return parser


def _apply_config_file(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise CliError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}", EXIT_VALIDATION)
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    for key, raw in values.items():
        if key in explicit:
            continue
        action = actions[key]
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise CliError(f"{args.config}: bad value for {key}: {exc}", EXIT_VALIDATION) from exc
        setattr(args, key, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if args.seed is None:
            args.seed = default_seed()
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except imageio.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (analytics.DegenerateThresholdError, RuntimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
