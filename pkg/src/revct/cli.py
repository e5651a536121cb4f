"""Command-line experiment runner.

Subcommands::

    revct phantom     --config C | --size N   phantom.revi / phantom.png
    revct simulate    --config C              phantom, clean sinogram, counts, b, manifest
    revct reconstruct --config C [--run L]    runs/<label>/ final image, metrics.csv
    revct compare     --config C              simulate + every run + compare.csv, summary.csv

Exit codes: 0 success, 2 config error, 3 I/O error, 4 divergence, 5 plugin failure.
"""
import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_PLUGIN = 5

METRICS_HEADER = ("iter", "rmsd", "data_fit", "rev_value", "time_ms")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fmt(v):
    return "" if v is None else repr(float(v))


def _configure_threads(n):
    if n is None:
        return
    if n < 1:
        raise CliError(EXIT_CONFIG, "--threads must be at least 1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    from ._parallel import set_threads

    set_threads(n)


def _load(args):
    from .config import load_config

    if args.config is None:
        raise CliError(EXIT_CONFIG, "--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.output is not None:
        cfg = cfg.with_output(args.output)
    return cfg


def _ensure_dir(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise CliError(EXIT_IO, f"output directory {path} is not writable")


def _make_phantom(cfg):
    from . import rawio
    from .image import shepp_logan

    if cfg.phantom.raw is None:
        return shepp_logan(cfg.phantom.shepp_logan)
    img = rawio.read_image(cfg.phantom.raw)
    n = cfg.geometry.image_size
    if img.shape != (n, n):
        from .config import ConfigError

        raise ConfigError(f"raw phantom is {img.shape}, geometry expects {(n, n)}")
    return img


def write_phantom(out, x):
    from . import rawio

    rawio.write_image(out / "phantom.revi", x)
    rawio.write_png(out / "phantom.png", x)


def simulate(cfg):
    """Write phantom, clean sinogram, counts, linearized data and the manifest."""
    from . import __version__, rawio
    from .config import dump_manifest
    from .measurement import COUNT_FLOOR, measure
    from .projector import forward_project

    out = cfg.output_dir
    _ensure_dir(out)
    geom = cfg.geometry.build()
    dose = cfg.dose.build()
    x = _make_phantom(cfg)
    try:
        counts, b = measure(geom, x, dose)
    except ValueError as exc:
        from .config import ConfigError

        raise ConfigError(f"phantom: {exc}") from exc
    write_phantom(out, x)
    rawio.write_sinogram(out / "sinogram_clean.revs", forward_project(geom, x))
    rawio.write_sinogram(out / "counts.revs", counts)
    rawio.write_sinogram(out / "b.revs", b)
    dump_manifest(cfg, out / "manifest.yaml", provenance={
        "revct_version": __version__,
        "detector_spacing_cm": geom.detector_spacing,
        "i0": dose.i0,
        "count_floor_photons": COUNT_FLOOR,
        "pre_log_correction": "counts below the floor are raised to it before the log",
    })
    return out


def _read_inputs(cfg):
    from . import rawio

    out = cfg.output_dir
    try:
        return rawio.read_image(out / "phantom.revi"), rawio.read_sinogram(out / "b.revs")
    except (OSError, rawio.FrameError) as exc:
        raise CliError(EXIT_IO, f"missing or unreadable simulated inputs in {out} "
                                f"(run 'simulate' first): {exc}") from exc


def iterations_to_threshold(rmsd_column, threshold):
    """First iteration whose RMSD is at or below ``threshold``, or None."""
    for k, v in enumerate(rmsd_column):
        if v <= threshold:
            return k
    return None


def reconstruct(cfg, label, inputs=None):
    """Run one configured reconstruction and write its directory; returns the trace."""
    from . import rawio
    from .solver import backprojection_init, run

    spec = cfg.run(label)
    x_true, b = inputs if inputs is not None else _read_inputs(cfg)
    geom = cfg.geometry.build()
    if b.shape != geom.sinogram_shape:
        raise CliError(EXIT_IO, f"b.revs has shape {b.shape}, geometry expects "
                                f"{geom.sinogram_shape}")
    x0 = None
    if spec.init == "backprojection":
        x0 = backprojection_init(geom, b, spec.solver.box)
    denoiser = spec.denoiser.build() if spec.denoiser is not None else None
    try:
        trace = run(geom, b, spec.solver, denoiser=denoiser, ground_truth=x_true, x0=x0)
    finally:
        if denoiser is not None:
            denoiser.close()

    run_dir = cfg.output_dir / "runs" / label
    _ensure_dir(run_dir)
    rawio.write_image(run_dir / "final.revi", trace.final_image)
    rawio.write_png(run_dir / "final.png", trace.final_image,
                    spec.solver.box.lo, spec.solver.box.hi)
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in trace.records:
            w.writerow([r.iteration, _fmt(r.rmsd), _fmt(r.data_fit), _fmt(r.rev_value),
                        _fmt(r.time_ms) if cfg.wall_clock else ""])
    with open(run_dir / "angles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iter", "sample", "angle_deg"))
        for k, drawn in enumerate(trace.angles):
            for j, a in enumerate(drawn):
                w.writerow([k, j, repr(a)])
    (run_dir / "run.json").write_text(json.dumps(
        {"label": label, "step_size": trace.step_size, "iterations": len(trace)}, indent=2) + "\n")
    # wall-clock lives apart from the deterministic outputs
    (run_dir / "timing.json").write_text(json.dumps(
        {"time_ms": [r.time_ms for r in trace.records]}) + "\n")
    return trace


def compare(cfg):
    """Simulate, run every configuration, and write the long table and summary."""
    if len(cfg.runs) < 2:
        from .config import ConfigError

        raise ConfigError("compare needs at least two runs")
    simulate(cfg)
    inputs = _read_inputs(cfg)
    traces, failure = {}, None
    for spec in cfg.runs:
        try:
            traces[spec.label] = reconstruct(cfg, spec.label, inputs)
        except Exception as exc:  # keep partial results, report the first failure
            code = _exit_code(exc)
            if code is None:
                raise
            print(f"revct: run {spec.label!r} failed: {exc}", file=sys.stderr)
            failure = failure or CliError(code, f"run {spec.label!r} failed: {exc}")

    out = cfg.output_dir
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label",) + METRICS_HEADER)
        for label, tr in traces.items():
            for r in tr.records:
                w.writerow([label, r.iteration, _fmt(r.rmsd), _fmt(r.data_fit),
                            _fmt(r.rev_value), _fmt(r.time_ms) if cfg.wall_clock else ""])
    finals = {label: tr.records[-1].rmsd for label, tr in traces.items()}
    threshold = cfg.threshold
    if threshold is None and finals:
        from .config import DEFAULT_THRESHOLD_FACTOR

        threshold = DEFAULT_THRESHOLD_FACTOR * min(finals.values())
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "final_rmsd", "iterations_to_threshold", "threshold"))
        for label, tr in traces.items():
            its = iterations_to_threshold(tr.column("rmsd"), threshold)
            w.writerow([label, _fmt(finals[label]), "" if its is None else its, _fmt(threshold)])
    if failure is not None:
        raise failure
    return out


def _exit_code(exc):
    from . import rawio
    from .config import ConfigError
    from .denoisers import DenoiserContractError, PluginError
    from .solver import DivergenceError

    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, (PluginError, DenoiserContractError)):
        return EXIT_PLUGIN
    if isinstance(exc, (OSError, rawio.FrameError)):
        return EXIT_IO
    return None


def _cmd_phantom(args):
    from .image import shepp_logan

    if args.config is not None:
        cfg = _load(args)
        out, x = cfg.output_dir, _make_phantom(cfg)
    else:
        if args.size is None:
            raise CliError(EXIT_CONFIG, "phantom needs --config or --size")
        if args.output is None:
            raise CliError(EXIT_CONFIG, "phantom --size needs --output")
        try:
            x = shepp_logan(args.size)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from exc
        out = Path(args.output)
    _ensure_dir(out)
    write_phantom(out, x)


def _cmd_simulate(args):
    simulate(_load(args))


def _cmd_reconstruct(args):
    cfg = _load(args)
    labels = [args.run] if args.run else [r.label for r in cfg.runs]
    for label in labels:
        cfg.run(label)
    inputs = _read_inputs(cfg)
    for label in labels:
        reconstruct(cfg, label, inputs)


def _cmd_compare(args):
    compare(_load(args))


def _global_flags(default):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=default, help="experiment YAML file")
    common.add_argument("--output", type=Path, default=default,
                        help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=default,
                        help="compiled-kernel threads; speed only")
    common.add_argument("--seed", type=int, default=default,
                        help="replace every seed in the config")
    return common


def build_parser():
    # flags are accepted before or after the subcommand; SUPPRESS keeps the
    # subcommand's copy from overwriting a value given before it
    common = _global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="revct", description=__doc__.split("\n")[0],
                                     parents=[_global_flags(None)])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("phantom", parents=[common], help="write the phantom image")
    p.add_argument("--size", type=int, help="Shepp-Logan size when no config is given")
    p.set_defaults(func=_cmd_phantom)
    p = sub.add_parser("simulate", parents=[common], help="simulate measurements")
    p.set_defaults(func=_cmd_simulate)
    p = sub.add_parser("reconstruct", parents=[common], help="run reconstructions")
    p.add_argument("--run", help="run label (default: every run)")
    p.set_defaults(func=_cmd_reconstruct)
    p = sub.add_parser("compare", parents=[common], help="simulate and compare all runs")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _configure_threads(args.threads)
        args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"revct: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
