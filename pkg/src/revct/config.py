"""YAML experiment configuration.

Example::

    geometry:
      image_size: 128
      num_views: 40
      num_detectors: 114
      pixel_size_cm: 0.2
      source_to_center_cm: 60
      center_to_detector_cm: 60
      detector_spacing_cm: auto      # smallest spacing whose fan covers the image
    dose:
      i0_mantissa: 2
      i0_exponent: 7.5               # I0 = 2 * 10**7.5 photons
      noiseless: false
      seed: 1
    phantom:
      shepp_logan: 128               # or  raw: phantom.revi
    compare:
      threshold: auto                # 1.5 x the best final RMSD
    output:
      dir: out/run1
      wall_clock: false              # true fills time_ms in metrics.csv
    runs:
      - label: fista
        reg_kind: none
        max_iters: 400
      - label: rev
        reg_kind: simplified_rev
        lambda: 3.0e-5
        rev: {num_samples: 1, mode: bicubic}
        seed: 3

Attenuation values are in 1/cm, lengths in cm. Relative paths are resolved
against the directory of the config file.
"""
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .image import BoxConstraint
from .measurement import DoseModel
from .regularizers import RevConfig
from .solver import REG_KINDS, SolverConfig

DENOISER_KINDS = ("identity", "gaussian", "nlm", "external")
INIT_KINDS = ("zero", "backprojection")
DEFAULT_THRESHOLD_FACTOR = 1.5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySpec:
    image_size: int
    num_views: int
    num_detectors: int
    pixel_size_cm: float = 1.0
    source_to_center_cm: float = 60.0
    center_to_detector_cm: float = 60.0
    detector_spacing_cm: float | None = None
    view_angles_deg: tuple | None = None

    def build(self):
        from .projector import FanBeamGeometry

        angles = None
        if self.view_angles_deg is not None:
            angles = tuple(math.radians(a) for a in self.view_angles_deg)
        return FanBeamGeometry(self.image_size, self.num_views, self.num_detectors,
                               pixel_size=self.pixel_size_cm,
                               source_to_center=self.source_to_center_cm,
                               center_to_detector=self.center_to_detector_cm,
                               detector_spacing=self.detector_spacing_cm, view_angles=angles)


@dataclass(frozen=True)
class DoseSpec:
    i0_mantissa: float
    i0_exponent: float
    noiseless: bool = False
    seed: int = 0

    def build(self):
        return DoseModel.from_mantissa_exponent(self.i0_mantissa, self.i0_exponent,
                                                seed=self.seed, noiseless=self.noiseless)


@dataclass(frozen=True)
class PhantomSpec:
    shepp_logan: int | None = None
    raw: Path | None = None


@dataclass(frozen=True)
class DenoiserSpec:
    kind: str
    params: tuple = ()  # sorted (key, value) pairs

    def build(self):
        from . import denoisers

        p = dict(self.params)
        if self.kind == "identity":
            return denoisers.identity()
        if self.kind == "gaussian":
            return denoisers.gaussian(p["sigma"])
        if self.kind == "nlm":
            return denoisers.nlm(p.get("patch", 5), p.get("window", 11), p.get("h", 0.1))
        return denoisers.external(list(p["command"]), p.get("timeout_s", 60.0))


@dataclass(frozen=True)
class RunSpec:
    label: str
    solver: SolverConfig
    denoiser: DenoiserSpec | None = None
    init: str = "zero"


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: GeometrySpec
    dose: DoseSpec
    phantom: PhantomSpec
    runs: tuple
    output_dir: Path
    threshold: float | None = None
    wall_clock: bool = False

    def run(self, label):
        for r in self.runs:
            if r.label == label:
                return r
        raise ConfigError(f"no run labelled {label!r}; have {[r.label for r in self.runs]}")

    def with_seed(self, seed):
        """Every seed in the experiment replaced by ``seed``."""
        runs = tuple(replace(r, solver=replace(r.solver, seed=seed)) for r in self.runs)
        return replace(self, dose=replace(self.dose, seed=seed), runs=runs)

    def with_output(self, path):
        return replace(self, output_dir=Path(path).resolve())


def _section(tree, key, required=True):
    value = tree.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing section {key!r}")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return value


def _take(d, key, conv, where, default=...):
    if key not in d or d[key] is None:
        if default is ...:
            raise ConfigError(f"{where}: missing key {key!r}")
        return default
    try:
        return conv(d[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _auto(conv):
    return lambda v: None if v == "auto" else conv(v)


def _strict_int(v):
    if isinstance(v, bool) or int(v) != v:
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _resolve(path, base):
    p = Path(path)
    return (p if p.is_absolute() else base / p).resolve()


_GEOMETRY_KEYS = ("image_size", "num_views", "num_detectors", "pixel_size_cm",
                  "source_to_center_cm", "center_to_detector_cm", "detector_spacing_cm",
                  "view_angles_deg")
_RUN_KEYS = ("label", "reg_kind", "lambda", "step_size", "max_iters", "box", "rev", "denoiser",
             "seed", "init", "power_iters")


def _parse_denoiser(d, where, base):
    if d is None:
        return None
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{where}: denoiser needs a 'kind'")
    kind = d["kind"]
    if kind not in DENOISER_KINDS:
        raise ConfigError(f"{where}: denoiser kind must be one of {DENOISER_KINDS}")
    allowed = {"identity": (), "gaussian": ("sigma",), "nlm": ("patch", "window", "h"),
               "external": ("command", "timeout_s")}[kind]
    params = {k: v for k, v in d.items() if k != "kind"}
    _check_keys(params, allowed, f"{where}.denoiser")
    if kind == "gaussian":
        params["sigma"] = _take(params, "sigma", float, where)
    if kind == "nlm":
        for k in ("patch", "window"):
            if k in params:
                params[k] = _take(params, k, _strict_int, where)
        if "h" in params:
            params["h"] = _take(params, "h", float, where)
    if kind == "external":
        cmd = params.get("command")
        if isinstance(cmd, str):
            cmd = [cmd]
        if not cmd or not all(isinstance(c, str) for c in cmd):
            raise ConfigError(f"{where}: external denoiser needs a command list")
        # a first element that names a file next to the config is made absolute
        first = base / cmd[0]
        if not Path(cmd[0]).is_absolute() and first.exists():
            cmd = [str(first.resolve())] + list(cmd[1:])
        params["command"] = tuple(cmd)
        if "timeout_s" in params:
            params["timeout_s"] = _take(params, "timeout_s", float, where)
    spec = DenoiserSpec(kind, tuple(sorted(params.items())))
    try:
        if kind != "external":
            spec.build()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{where}: bad denoiser parameters: {exc}") from exc
    return spec


def _parse_run(d, i, base):
    where = f"runs[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    _check_keys(d, _RUN_KEYS, where)
    label = _take(d, "label", str, where)
    kind = _take(d, "reg_kind", str, where, "none")
    if kind not in REG_KINDS:
        raise ConfigError(f"{where}: reg_kind must be one of {REG_KINDS}")
    lam = _take(d, "lambda", float, where, 0.0)
    rev = d.get("rev") or {}
    _check_keys(rev, ("num_samples", "mode"), f"{where}.rev")
    box = d.get("box", [0.0, 1.0])
    init = _take(d, "init", str, where, "zero")
    if init not in INIT_KINDS:
        raise ConfigError(f"{where}: init must be one of {INIT_KINDS}")
    try:
        if not (isinstance(box, (list, tuple)) and len(box) == 2):
            raise ValueError("box must be a [lo, hi] pair")
        solver = SolverConfig(
            max_iters=_take(d, "max_iters", _strict_int, where),
            reg_kind=kind,
            lam=lam,
            step_size=_take(d, "step_size", _auto(float), where, None),
            box=BoxConstraint(float(box[0]), float(box[1])),
            rev=RevConfig(lam, _take(rev, "num_samples", _strict_int, where, 1),
                          _take(rev, "mode", str, where, "bicubic")),
            seed=_take(d, "seed", _strict_int, where, 0),
            power_iters=_take(d, "power_iters", _strict_int, where, 100),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    denoiser = _parse_denoiser(d.get("denoiser"), where, base)
    if kind in ("red", "rev") and denoiser is None:
        raise ConfigError(f"{where}: reg_kind {kind!r} needs a denoiser")
    if kind in ("none", "simplified_rev") and denoiser is not None:
        raise ConfigError(f"{where}: reg_kind {kind!r} takes no denoiser")
    return RunSpec(label, solver, denoiser, init)


def parse_config(tree, base=Path(".")):
    """Build an :class:`ExperimentConfig` from a parsed YAML tree."""
    if not isinstance(tree, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(tree, ("geometry", "dose", "phantom", "runs", "compare", "output", "provenance"),
                "config")
    base = Path(base).resolve()

    g = _section(tree, "geometry")
    _check_keys(g, _GEOMETRY_KEYS, "geometry")
    angles = g.get("view_angles_deg")
    geometry = GeometrySpec(
        image_size=_take(g, "image_size", _strict_int, "geometry"),
        num_views=_take(g, "num_views", _strict_int, "geometry"),
        num_detectors=_take(g, "num_detectors", _strict_int, "geometry"),
        pixel_size_cm=_take(g, "pixel_size_cm", float, "geometry", 1.0),
        source_to_center_cm=_take(g, "source_to_center_cm", float, "geometry", 60.0),
        center_to_detector_cm=_take(g, "center_to_detector_cm", float, "geometry", 60.0),
        detector_spacing_cm=_take(g, "detector_spacing_cm", _auto(float), "geometry", None),
        view_angles_deg=None if angles is None else tuple(float(a) for a in angles),
    )
    try:
        geometry.build()
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc

    d = _section(tree, "dose")
    _check_keys(d, ("i0_mantissa", "i0_exponent", "noiseless", "seed"), "dose")
    dose = DoseSpec(_take(d, "i0_mantissa", float, "dose"), _take(d, "i0_exponent", float, "dose"),
                    _take(d, "noiseless", _bool, "dose", False),
                    _take(d, "seed", _strict_int, "dose", 0))
    try:
        dose.build()
    except ValueError as exc:
        raise ConfigError(f"dose: {exc}") from exc

    p = _section(tree, "phantom")
    _check_keys(p, ("shepp_logan", "raw"), "phantom")
    if ("shepp_logan" in p) == ("raw" in p):
        raise ConfigError("phantom: give exactly one of 'shepp_logan' or 'raw'")
    if "raw" in p:
        phantom = PhantomSpec(raw=_resolve(p["raw"], base))
        if not phantom.raw.is_file():
            raise ConfigError(f"phantom: raw file {phantom.raw} does not exist")
    else:
        phantom = PhantomSpec(shepp_logan=_take(p, "shepp_logan", _strict_int, "phantom"))
        if phantom.shepp_logan != geometry.image_size:
            raise ConfigError("phantom: shepp_logan size must equal geometry.image_size")

    runs_tree = tree.get("runs")
    if not isinstance(runs_tree, list) or not runs_tree:
        raise ConfigError("runs must be a non-empty list")
    runs = tuple(_parse_run(r, i, base) for i, r in enumerate(runs_tree))
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"run labels must be unique, got {labels}")
    for label in labels:
        if not label or "/" in label or label.startswith("."):
            raise ConfigError(f"run label {label!r} is not a valid directory name")

    c = _section(tree, "compare", required=False)
    _check_keys(c, ("threshold",), "compare")
    threshold = _take(c, "threshold", _auto(float), "compare", None)
    if threshold is not None and not threshold > 0:
        raise ConfigError("compare.threshold must be positive")

    o = _section(tree, "output", required=False)
    _check_keys(o, ("dir", "wall_clock"), "output")
    return ExperimentConfig(geometry, dose, phantom, runs,
                            output_dir=_resolve(o.get("dir", "out"), base),
                            threshold=threshold,
                            wall_clock=_take(o, "wall_clock", _bool, "output", False))


def load_config(path):
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    return parse_config(tree, path.parent)


def _run_tree(r):
    s = r.solver
    tree = {"label": r.label, "reg_kind": s.reg_kind, "lambda": s.lam,
            "step_size": "auto" if s.step_size is None else s.step_size,
            "max_iters": s.max_iters, "box": [s.box.lo, s.box.hi],
            "rev": {"num_samples": s.rev.num_samples, "mode": s.rev.mode},
            "seed": s.seed, "init": r.init, "power_iters": s.power_iters}
    if r.denoiser is not None:
        den = {"kind": r.denoiser.kind}
        for k, v in r.denoiser.params:
            den[k] = list(v) if isinstance(v, tuple) else v
        tree["denoiser"] = den
    return tree


def to_tree(cfg):
    """Plain YAML-ready tree; :func:`parse_config` maps it back to an equal config."""
    g = cfg.geometry
    geometry = {"image_size": g.image_size, "num_views": g.num_views,
                "num_detectors": g.num_detectors, "pixel_size_cm": g.pixel_size_cm,
                "source_to_center_cm": g.source_to_center_cm,
                "center_to_detector_cm": g.center_to_detector_cm,
                "detector_spacing_cm": ("auto" if g.detector_spacing_cm is None
                                        else g.detector_spacing_cm)}
    if g.view_angles_deg is not None:
        geometry["view_angles_deg"] = list(g.view_angles_deg)
    d = cfg.dose
    phantom = ({"raw": str(cfg.phantom.raw)} if cfg.phantom.raw is not None
               else {"shepp_logan": cfg.phantom.shepp_logan})
    return {
        "geometry": geometry,
        "dose": {"i0_mantissa": d.i0_mantissa, "i0_exponent": d.i0_exponent,
                 "noiseless": d.noiseless, "seed": d.seed},
        "phantom": phantom,
        "compare": {"threshold": "auto" if cfg.threshold is None else cfg.threshold},
        "output": {"dir": str(cfg.output_dir), "wall_clock": cfg.wall_clock},
        "runs": [_run_tree(r) for r in cfg.runs],
    }


def dump_manifest(cfg, path, provenance=None):
    tree = to_tree(cfg)
    if provenance:
        tree["provenance"] = provenance
    Path(path).write_text(yaml.safe_dump(tree, sort_keys=False))
