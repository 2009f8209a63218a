"""Interior-field checks of the boundary identities.

The inverse pipeline only sees boundary data.  These routines additionally
run the solver to time T and compare interior inner products with their
boundary-data expressions, which validates solver, synthesis and the
operator K together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import apply_K, assemble_rhs_b, slot_inner, STauIndex
from .geometry import HalfSpace
from .measurement import MeasurementSet
from .solver import NeumannSource, SimGrid, field_inner, interior_snapshots


def random_sources(data: MeasurementSet, count: int, seed: int, start: int | None = None) -> list[np.ndarray]:
    """White-noise slot coefficients on slots ``start..N_T-1`` (default: the
    second half of (0, T))."""
    cfg = data.config
    if start is None:
        start = cfg.n_half // 2
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        c = np.zeros((cfg.n_half, cfg.n_x))
        c[start:] = rng.normal(size=(cfg.n_half - start, cfg.n_x))
        out.append(c)
    return out


def snapshots_at_T(data: MeasurementSet, sources: list[np.ndarray], grid: SimGrid | None = None) -> np.ndarray:
    cfg = data.config
    if grid is None:
        grid = SimGrid.for_sampling(cfg.n_space, cfg.dt_samp)
    return interior_snapshots([NeumannSource(c, cfg.dt_samp) for c in sources], data.obstacle, cfg.T, grid)


@dataclass
class IdentityReport:
    interior: np.ndarray
    boundary: np.ndarray
    scale: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.boundary - self.interior) / self.scale

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors))


def blagoveshchenskii_check(data: MeasurementSet, pairs: int = 5, seed: int = 0) -> IdentityReport:
    """``(f, K h)`` against ``(u^f(T), u^h(T))`` for random source pairs,
    errors relative to ``|u^f(T)| |u^h(T)|``."""
    cfg = data.config
    srcs = random_sources(data, 2 * pairs, seed)
    U = snapshots_at_T(data, srcs)
    n, obs, h = cfg.n_space, data.obstacle, cfg.dt_samp
    interior, boundary, scale = [], [], []
    for p in range(pairs):
        f, g = srcs[2 * p], srcs[2 * p + 1]
        uf, ug = U[2 * p], U[2 * p + 1]
        interior.append(field_inner(uf, ug, n, obs))
        boundary.append(slot_inner(f, apply_K(g, data), h))
        scale.append(np.sqrt(field_inner(uf, uf, n, obs) * field_inner(ug, ug, n, obs)))
    return IdentityReport(np.array(interior), np.array(boundary), np.array(scale))


def w_star_one_check(data: MeasurementSet, count: int = 5, seed: int = 0) -> IdentityReport:
    """``(u^f(T), 1)`` against ``(f, b)`` with ``b = T - t``, relative to the
    interior value."""
    cfg = data.config
    srcs = random_sources(data, count, seed)
    U = snapshots_at_T(data, srcs)
    b = assemble_rhs_b(STauIndex.for_data(HalfSpace(cfg.T, cfg.T), data))
    interior = np.array([field_inner(u, np.ones_like(u), cfg.n_space, data.obstacle) for u in U])
    boundary = np.array([slot_inner(f, b, cfg.dt_samp) for f in srcs])
    return IdentityReport(interior, boundary, np.abs(interior))
