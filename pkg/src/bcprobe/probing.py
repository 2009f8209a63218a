"""Obstacle detection by probing with domains of influence.

Volumes estimated from obstacle data are compared against the same estimates
on a known empty background; the systematic bias of the estimator cancels in
the difference.  The largest probe radius with no detectable volume loss
approximates the clearance R_T(y) of each probe center, and the union of the
corresponding disks approximates the visibility region.
"""

from __future__ import annotations

import csv
import io
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import STauIndex, solve_control
from .geometry import (DiskProbe, HalfSpace, Obstacle, RasterGrid, exact_volume_M, influence_mask_with_obstacle,
                       union_of_disks)
from .measurement import MeasurementSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeParameters:
    epsilon: float = 5e-4
    n_r: int = 100
    r_range: tuple[float, float] = (0.1, 0.5)
    alpha: float = 0.0
    n_cg: int = 10
    y_samples: tuple[float, ...] | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_r < 2:
            raise ValueError("need at least two radii")
        lo, hi = self.r_range
        if not 0 <= lo < hi:
            raise ValueError("r_range must be increasing and nonnegative")

    def radii(self) -> np.ndarray:
        return np.linspace(self.r_range[0], self.r_range[1], self.n_r)

    def centers(self, n_x: int) -> np.ndarray:
        if self.y_samples is None:
            return (np.arange(n_x) + 0.5) / n_x
        return np.asarray(self.y_samples, dtype=float)


def paper_scale_parameters(**overrides) -> ProbeParameters:
    """Radii ``l / 500`` restricted to [1/10, 1/2] (201 values) at the 20
    receiver centers: 4020 control systems per data set."""
    kw = dict(epsilon=5e-4, n_r=201, r_range=(0.1, 0.5))
    kw.update(overrides)
    return ProbeParameters(**kw)


@dataclass
class VolumeCurve:
    family: str
    radii: np.ndarray
    estimates: np.ndarray
    reference: np.ndarray | None = None
    y1: float | None = None

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.estimates = np.asarray(self.estimates, dtype=float)
        if self.radii.shape != self.estimates.shape:
            raise ValueError("radii and estimates differ in length")
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if self.reference is not None:
            self.reference = np.asarray(self.reference, dtype=float)
            if self.reference.shape != self.radii.shape:
                raise ValueError("reference length does not match radii")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "estimate", "reference"])
        ref = self.reference if self.reference is not None else [float("nan")] * len(self.radii)
        for r, e, q in zip(self.radii, self.estimates, ref):
            w.writerow([f"{r:.10g}", repr(float(e)), repr(float(q))])
        return buf.getvalue()


def _family(template) -> str:
    if isinstance(template, HalfSpace):
        return "halfspace"
    return f"disk(y1={template.y1:.10g})"


def volume_curve(template, data: MeasurementSet, params: ProbeParameters,
                 radii: np.ndarray | None = None) -> VolumeCurve:
    """Estimated V(M_Sigma(tau_r)) along the radius grid for one profile family.

    ``template`` is a :class:`HalfSpace` or a :class:`DiskProbe`; only its
    type, center and horizon are used.
    """
    if radii is None:
        radii = params.radii()
    est = np.zeros(len(radii))
    for i, r in enumerate(radii):
        idx = STauIndex.for_data(template.with_radius(float(r)), data)
        if idx.size == 0:
            continue
        est[i] = solve_control(idx, data, params.alpha, params.n_cg).volume_estimate
    ref = np.array([exact_volume_M(template.with_radius(float(r))) for r in radii])
    y1 = getattr(template, "y1", None)
    return VolumeCurve(_family(template), radii, est, ref, y1)


def oracle_difference(template, obstacle: Obstacle, radii, grid: RasterGrid) -> np.ndarray:
    """Rasterized ``V(M_Sigma(tau_r)) - V(M(tau_r))`` for each radius.

    A free cell belongs to M(tau_r) when its Euclidean distance ``e`` to the
    probe is at most r and to M_Sigma(tau_r) when its obstacle-avoiding
    distance ``g >= e`` is; one distance evaluation serves every radius.
    """
    x1, x2 = grid.centers()
    if isinstance(template, HalfSpace):
        e = x2
        g = obstacle.geodesic_from_gamma(x1, x2) if not obstacle.is_empty else e
    else:
        e = np.hypot(x1 - template.y1, x2)
        g = obstacle.geodesic_from_point(template.y, x1, x2) if not obstacle.is_empty else e
    g = np.where(obstacle.contains(x1, x2), np.inf, np.maximum(g, e))
    e = np.sort(e.ravel())
    g = np.sort(g.ravel())
    r = np.asarray(radii, dtype=float)
    lost = np.searchsorted(e, r, side="right") - np.searchsorted(g, r, side="right")
    return -lost * grid.cell_area


def difference_curve(obstacle_curve: VolumeCurve, empty_curve: VolumeCurve,
                     reference: np.ndarray | None = None) -> VolumeCurve:
    """Pointwise differences of two volume curves on the same radius grid."""
    if obstacle_curve.radii.shape != empty_curve.radii.shape or not np.array_equal(
            obstacle_curve.radii, empty_curve.radii):
        raise ValueError("volume curves use different radius grids")
    if obstacle_curve.family != empty_curve.family:
        raise ValueError("volume curves belong to different profile families")
    return VolumeCurve(obstacle_curve.family, obstacle_curve.radii,
                       obstacle_curve.estimates - empty_curve.estimates, reference, obstacle_curve.y1)


@dataclass(frozen=True)
class Clearance:
    radius: float
    index: int
    immediate: bool


def estimate_clearance(diff_curve: VolumeCurve, params: ProbeParameters) -> Clearance:
    """Largest grid radius whose volume difference is at least ``-epsilon``.

    When no radius passes, the smallest radius is returned with
    ``immediate=True``.
    """
    if diff_curve.radii.size == 0:
        raise ValueError("empty difference curve")
    ok = np.flatnonzero(diff_curve.estimates >= -params.epsilon)
    if ok.size == 0:
        return Clearance(float(diff_curve.radii[0]), 0, True)
    i = int(ok[-1])
    return Clearance(float(diff_curve.radii[i]), i, False)


# ---------------------------------------------------------------------------
# Visibility-region reconstruction
# ---------------------------------------------------------------------------


@dataclass
class ReconstructionMask:
    grid: RasterGrid
    mask: np.ndarray

    @property
    def area(self) -> float:
        return self.grid.area(self.mask)


@dataclass
class Reconstruction:
    mask: ReconstructionMask
    centers: np.ndarray
    clearances: list[Clearance]
    obstacle_curves: list[VolumeCurve]
    empty_curves: list[VolumeCurve]
    differences: list[VolumeCurve] = field(default_factory=list)

    def clearance_radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.clearances])


_WORKER_DATA: dict = {}


def _init_worker(datasets):
    _WORKER_DATA.clear()
    _WORKER_DATA.update(datasets)


def _curve_task(args):
    key, y1, T, params = args
    return volume_curve(DiskProbe(y1, params.r_range[1], T), _WORKER_DATA[key], params)


def _map_curves(tasks, datasets, workers):
    """Parallel map over curve tasks; results keep task order."""
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(datasets)
        try:
            return [_curve_task(t) for t in tasks]
        finally:
            _WORKER_DATA.clear()
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                             initargs=(datasets,)) as pool:
        return list(pool.map(_curve_task, tasks, chunksize=1))


def calibrate(empty_data: MeasurementSet, params: ProbeParameters) -> list[VolumeCurve]:
    """Disk-probe volume curves on the known empty background, one per center."""
    T = empty_data.config.T
    ys = params.centers(empty_data.config.n_x)
    tasks = [("empty", float(y), T, params) for y in ys]
    return _map_curves(tasks, {"empty": empty_data}, params.workers)


def reconstruct_h_region(data: MeasurementSet, empty_data: MeasurementSet | None, params: ProbeParameters,
                         grid: RasterGrid, calibration: list[VolumeCurve] | None = None) -> Reconstruction:
    """Estimate clearances at every probe center and rasterize the union of
    the disks B(y, r_T(y)) inside M."""
    if calibration is None and empty_data is None:
        raise ValueError("need empty-background data or a stored calibration")
    if empty_data is not None and not data.compatible_with(empty_data):
        raise ValueError("obstacle and calibration data use different measurement configurations")
    T = data.config.T
    ys = params.centers(data.config.n_x)
    if len(ys) == 0:
        raise ValueError("no probe centers")
    tasks = [("data", float(y), T, params) for y in ys]
    datasets = {"data": data}
    if calibration is None:
        tasks += [("empty", float(y), T, params) for y in ys]
        datasets["empty"] = empty_data
    curves = _map_curves(tasks, datasets, params.workers)
    obstacle_curves = curves[: len(ys)]
    empty_curves = curves[len(ys):] if calibration is None else list(calibration)
    if len(empty_curves) != len(ys):
        raise ValueError("calibration does not cover the probe centers")
    diffs = [difference_curve(o, e) for o, e in zip(obstacle_curves, empty_curves)]
    clearances = [estimate_clearance(d, params) for d in diffs]
    radii = [0.0 if c.immediate else c.radius for c in clearances]
    mask = union_of_disks(ys, radii, grid)
    return Reconstruction(ReconstructionMask(grid, mask), np.asarray(ys), clearances, obstacle_curves,
                          empty_curves, diffs)


# ---------------------------------------------------------------------------
# Error maps
# ---------------------------------------------------------------------------

GRAY, WHITE, BLACK = 128, 255, 0


@dataclass
class ErrorMap:
    grid: RasterGrid
    false_positive: np.ndarray
    false_negative: np.ndarray

    @property
    def false_positive_cells(self) -> int:
        return int(np.count_nonzero(self.false_positive))

    @property
    def false_negative_cells(self) -> int:
        return int(np.count_nonzero(self.false_negative))

    @property
    def error_fraction(self) -> float:
        return (self.false_positive_cells + self.false_negative_cells) * self.grid.cell_area

    @property
    def image(self) -> np.ndarray:
        """Gray where correct, white for false positives, black for false negatives."""
        img = np.full(self.false_positive.shape, GRAY, dtype=np.uint8)
        img[self.false_positive] = WHITE
        img[self.false_negative] = BLACK
        return img

    def summary_csv(self) -> str:
        cells = self.grid.n**2
        return ("fp_cells,fn_cells,fp_fraction,fn_fraction,error_fraction\n"
                f"{self.false_positive_cells},{self.false_negative_cells},"
                f"{self.false_positive_cells / cells:.8g},{self.false_negative_cells / cells:.8g},"
                f"{self.error_fraction:.8g}\n")


def _as_mask(m):
    if isinstance(m, ReconstructionMask):
        return m.grid, m.mask
    return None, np.asarray(m, dtype=bool)


def error_map(reconstructed, exact, grid: RasterGrid | None = None) -> ErrorMap:
    """False positives (reconstructed but not exact) and false negatives."""
    g1, a = _as_mask(reconstructed)
    g2, b = _as_mask(exact)
    if a.shape != b.shape or (g1 is not None and g2 is not None and g1 != g2):
        raise ValueError("masks live on different grids")
    grid = grid or g1 or g2 or RasterGrid(a.shape[0])
    return ErrorMap(grid, a & ~b, b & ~a)
