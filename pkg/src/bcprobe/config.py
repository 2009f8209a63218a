"""Experiment configuration files.

Configurations are INI files read with :mod:`configparser`.  Every file
carries ``schema_version`` in its ``[meta]`` section; unknown sections or keys
are rejected so that typos do not silently fall back to defaults.  Example::

    [meta]
    schema_version = 1
    preset = noiseless

    [obstacle]
    kind = disk

    [measurement]
    n_space = 200

A preset supplies every value; the file overrides individual keys.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace

from .geometry import Obstacle, obstacle_preset
from .measurement import MeasurementConfig
from .probing import ProbeParameters

SCHEMA_VERSION = 1

# alpha pinned by noise level in paper mode
PAPER_ALPHA_7DB = 1e-3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    obstacle: Obstacle = field(default_factory=lambda: obstacle_preset("disk"))
    measurement: MeasurementConfig = field(default_factory=lambda: MeasurementConfig(n_space=200))
    probe: ProbeParameters = field(default_factory=ProbeParameters)
    snr_db: float | None = None
    seed: int = 0
    courant_dt: float = 0.5
    raster: int = 200
    output: str = "runs"
    workers: int = 1
    paper: bool = False
    preset: str = "custom"

    def __post_init__(self):
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not 0 < self.courant_dt < 1 / math.sqrt(2):
            raise ConfigError("courant_dt must lie in (0, 1/sqrt(2)) for a stable scheme")
        if self.raster < 2:
            raise ConfigError("raster grid needs at least 2 cells per side")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.paper:
            m = self.measurement
            if (m.n_x, m.n_t, m.T, self.probe.n_cg) != (20, 800, 1.0, 10):
                raise ConfigError("paper mode pins n_x = 20, n_t = 800, T = 1 and n_cg = 10")
            want = PAPER_ALPHA_7DB if (self.snr_db is not None and self.snr_db <= 7.0) else 0.0
            if self.probe.alpha != want:
                raise ConfigError(f"paper mode pins alpha = {want:g} at this noise level")

    @property
    def noisy(self) -> bool:
        return self.snr_db is not None

    def to_ini(self, include_run: bool = True) -> str:
        """Canonical text form; ``include_run=False`` drops keys that do not
        affect results (output directory, worker count)."""
        ob = self.obstacle
        m = self.measurement
        p = self.probe
        centers = "receivers" if p.y_samples is None else ", ".join(repr(float(y)) for y in p.y_samples)
        lines = [
            "[meta]", f"schema_version = {SCHEMA_VERSION}", f"preset = {self.preset}",
            f"paper = {str(self.paper).lower()}", "",
            "[obstacle]", f"kind = {ob.kind}"]
        if not ob.is_empty:
            lines += [f"center = {ob.center[0]!r}, {ob.center[1]!r}", f"size = {ob.size!r}",
                      f"angle = {ob.angle!r}"]
        lines += [
            "", "[measurement]", f"n_x = {m.n_x}", f"n_t = {m.n_t}", f"T = {m.T!r}",
            f"n_space = {m.n_space}", f"courant_dt = {self.courant_dt!r}", "",
            "[noise]", f"snr_db = {'none' if self.snr_db is None else repr(float(self.snr_db))}",
            f"seed = {self.seed}", "",
            "[probe]", f"epsilon = {p.epsilon!r}", f"n_r = {p.n_r}", f"r_min = {p.r_range[0]!r}",
            f"r_max = {p.r_range[1]!r}", f"alpha = {p.alpha!r}", f"n_cg = {p.n_cg}", f"centers = {centers}",
            f"raster = {self.raster}"]
        if include_run:
            lines += ["", "[run]", f"output = {self.output}", f"workers = {self.workers}"]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini(include_run=False).encode()).hexdigest()[:12]

    def probe_parameters(self) -> ProbeParameters:
        return replace(self.probe, workers=self.workers)


def _centers(n: int, count: int | None):
    if count is None:
        return None
    return tuple((i + 0.5) / count for i in range(count))


def preset(name: str) -> ExperimentConfig:
    """Shipped configurations.

    ``noiseless``, ``snr14`` and ``snr7`` run at ``n_space = 200`` with 100
    radii and the 20 receiver centers.  ``desk`` is the quick noiseless demo
    with 10 centers; ``paper`` is the 4020-system configuration at
    ``n_space = 400``.
    """
    base = ExperimentConfig(preset=name)
    if name == "noiseless":
        return base
    if name == "snr14":
        return replace(base, snr_db=14.0, seed=1, probe=ProbeParameters(epsilon=4e-3))
    if name == "snr7":
        return replace(base, snr_db=7.0, seed=1, probe=ProbeParameters(epsilon=4e-3, alpha=PAPER_ALPHA_7DB))
    if name == "desk":
        return replace(base, probe=ProbeParameters(y_samples=_centers(20, 10)))
    if name == "paper":
        return replace(base, measurement=MeasurementConfig(n_space=400), paper=True,
                       probe=ProbeParameters(n_r=201), raster=400)
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("noiseless", "snr14", "snr7", "desk", "paper")

_KEYS = {
    "meta": {"schema_version", "preset", "paper"},
    "obstacle": {"kind", "center", "size", "angle"},
    "measurement": {"n_x", "n_t", "t", "n_space", "courant_dt"},
    "noise": {"snr_db", "seed"},
    "probe": {"epsilon", "n_r", "r_min", "r_max", "alpha", "n_cg", "centers", "raster"},
    "run": {"output", "workers"},
}


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def loads(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    for sec in cp.sections():
        if sec not in _KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - _KEYS[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(extra))}")
    if not cp.has_option("meta", "schema_version"):
        raise ConfigError("missing [meta] schema_version")
    version = cp.getint("meta", "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    try:
        return _build(cp)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build(cp: configparser.ConfigParser) -> ExperimentConfig:
    name = cp.get("meta", "preset", fallback="noiseless")
    cfg = preset(name)

    def get(sec, key):
        return cp.get(sec, key) if cp.has_option(sec, key) else None

    ob = cfg.obstacle
    kind = get("obstacle", "kind")
    if kind is not None:
        ob = obstacle_preset(kind)
    if not ob.is_empty and any(get("obstacle", k) is not None for k in ("center", "size", "angle")):
        center = _floats(get("obstacle", "center"), 2) if get("obstacle", "center") else ob.center
        size = float(get("obstacle", "size") or ob.size)
        angle = float(get("obstacle", "angle") or ob.angle)
        ob = Obstacle(ob.kind, center, size, angle)

    m = cfg.measurement
    m = MeasurementConfig(
        n_x=int(get("measurement", "n_x") or m.n_x), n_t=int(get("measurement", "n_t") or m.n_t),
        T=float(get("measurement", "t") or m.T), n_space=int(get("measurement", "n_space") or m.n_space))

    snr = cfg.snr_db
    if get("noise", "snr_db") is not None:
        s = get("noise", "snr_db").strip().lower()
        snr = None if s in ("none", "") else float(s)

    p = cfg.probe
    centers = get("probe", "centers")
    ys = p.y_samples
    if centers is not None:
        c = centers.strip().lower()
        ys = None if c == "receivers" else _floats(centers)
    p = ProbeParameters(
        epsilon=float(get("probe", "epsilon") or p.epsilon), n_r=int(get("probe", "n_r") or p.n_r),
        r_range=(float(get("probe", "r_min") or p.r_range[0]), float(get("probe", "r_max") or p.r_range[1])),
        alpha=float(get("probe", "alpha") or p.alpha), n_cg=int(get("probe", "n_cg") or p.n_cg),
        y_samples=ys)

    return ExperimentConfig(
        obstacle=ob, measurement=m, probe=p, snr_db=snr,
        seed=int(get("noise", "seed") or cfg.seed),
        courant_dt=float(get("measurement", "courant_dt") or cfg.courant_dt),
        raster=int(get("probe", "raster") or cfg.raster),
        output=get("run", "output") or cfg.output,
        workers=int(get("run", "workers") or cfg.workers),
        paper=_bool(get("meta", "paper")) if get("meta", "paper") is not None else cfg.paper,
        preset=name)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    return loads(text)
