"""Geometry of the unit square M = [0, 1]^2 with measurement edge Gamma = (0, 1) x {0}.

Obstacles are convex (a disk or a rotated square) and strictly inside M, so
shortest paths in M minus the obstacle are taut strings that wrap around the
obstacle boundary.  The geodesic distances below use that structure and are
exact; :func:`dijkstra_influence_mask` is an independent grid-graph route kept
for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

_EPS = 1e-12


# ---------------------------------------------------------------------------
# Raster support
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterGrid:
    """n x n cells over the unit square; arrays are indexed ``[row, col]`` with
    row 0 at the bottom (x2 small)."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"raster grid needs n >= 2, got {self.n}")

    @property
    def cell_size(self) -> float:
        return 1.0 / self.n

    @property
    def cell_area(self) -> float:
        return 1.0 / self.n**2

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X1, X2)`` cell-center coordinate arrays of shape (n, n)."""
        a = self.axis()
        x2, x1 = np.meshgrid(a, a, indexing="ij")
        return x1, x2

    def area(self, mask: np.ndarray) -> float:
        return float(np.count_nonzero(mask)) * self.cell_area


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    """Sound-hard inclusion.  ``kind`` is ``"none"``, ``"disk"`` or ``"square"``.

    For a disk ``size`` is the radius; for a square it is the side length and
    ``angle`` rotates the square's axes counter-clockwise.
    """

    kind: str = "none"
    center: tuple[float, float] = (0.5, 0.5)
    size: float = 0.0
    angle: float = 0.0
    _vertices: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.kind not in ("none", "disk", "square"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.kind == "none":
            return
        if not self.size > 0:
            raise ValueError("obstacle size must be positive")
        cx, cy = self.center
        if self.kind == "disk":
            lo = min(cx, cy) - self.size
            hi = max(cx, cy) + self.size
            if lo <= 0.0 or hi >= 1.0:
                raise ValueError("disk obstacle must lie strictly inside the unit square")
        else:
            verts = self._square_vertices()
            if verts.min() <= 0.0 or verts.max() >= 1.0:
                raise ValueError("square obstacle must lie strictly inside the unit square")
            object.__setattr__(self, "_vertices", verts)

    @classmethod
    def none(cls) -> "Obstacle":
        return cls("none")

    @classmethod
    def disk(cls, center=(0.5, 0.5), radius=0.3) -> "Obstacle":
        return cls("disk", tuple(center), float(radius))

    @classmethod
    def square(cls, center=(0.5, 0.5), side=0.424, angle=math.pi / 4) -> "Obstacle":
        return cls("square", tuple(center), float(side), float(angle))

    @property
    def is_empty(self) -> bool:
        return self.kind == "none"

    def describe(self) -> str:
        if self.is_empty:
            return "none"
        cx, cy = self.center
        return f"{self.kind}(center=({cx:.6g},{cy:.6g}),size={self.size:.6g},angle={self.angle:.6g})"

    # -- square helpers -----------------------------------------------------

    def _square_vertices(self) -> np.ndarray:
        h = self.size / 2
        c, s = math.cos(self.angle), math.sin(self.angle)
        local = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def vertices(self) -> np.ndarray:
        """Counter-clockwise corners of a square obstacle, shape (4, 2)."""
        if self.kind != "square":
            raise ValueError("only square obstacles have vertices")
        return self._vertices

    def _halfplanes(self) -> tuple[np.ndarray, np.ndarray]:
        v = self._vertices
        edges = np.roll(v, -1, axis=0) - v
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = np.einsum("ij,ij->i", normals, v)
        return normals, offsets

    def _local(self, x1, x2):
        c, s = math.cos(self.angle), math.sin(self.angle)
        d1 = np.asarray(x1, dtype=float) - self.center[0]
        d2 = np.asarray(x2, dtype=float) - self.center[1]
        return c * d1 + s * d2, -s * d1 + c * d2

    # -- queries ------------------------------------------------------------

    def contains(self, x1, x2) -> np.ndarray:
        """Closed-set membership of points (vectorized)."""
        x1 = np.asarray(x1, dtype=float)
        if self.is_empty:
            return np.zeros(x1.shape, dtype=bool)
        if self.kind == "disk":
            return np.hypot(x1 - self.center[0], np.asarray(x2) - self.center[1]) <= self.size
        u, v = self._local(x1, x2)
        h = self.size / 2
        return (np.abs(u) <= h) & (np.abs(v) <= h)

    def distance(self, x1, x2) -> np.ndarray:
        """Euclidean distance from points to the obstacle, 0 inside."""
        if self.is_empty:
            raise ValueError("distance to an empty obstacle is undefined")
        if self.kind == "disk":
            r = np.hypot(np.asarray(x1, float) - self.center[0], np.asarray(x2, float) - self.center[1])
            return np.maximum(r - self.size, 0.0)
        u, v = self._local(x1, x2)
        h = self.size / 2
        qu = np.maximum(np.abs(u) - h, 0.0)
        qv = np.maximum(np.abs(v) - h, 0.0)
        return np.hypot(qu, qv)

    def segment_blocked(self, a1, a2, b1, b2) -> np.ndarray:
        """True where the segment a-b passes through the obstacle interior."""
        a1, a2, b1, b2 = np.broadcast_arrays(*(np.asarray(z, dtype=float) for z in (a1, a2, b1, b2)))
        if self.is_empty:
            return np.zeros(a1.shape, dtype=bool)
        d1, d2 = b1 - a1, b2 - a2
        if self.kind == "disk":
            cx, cy = self.center
            ll = d1 * d1 + d2 * d2
            t = np.where(ll > 0, ((cx - a1) * d1 + (cy - a2) * d2) / np.where(ll > 0, ll, 1.0), 0.0)
            t = np.clip(t, 0.0, 1.0)
            dist = np.hypot(a1 + t * d1 - cx, a2 + t * d2 - cy)
            return dist < self.size - 1e-12
        normals, offsets = self._halfplanes()
        t_in = np.zeros(a1.shape)
        t_out = np.ones(a1.shape)
        outside = np.zeros(a1.shape, dtype=bool)
        length = np.hypot(d1, d2)
        for (n1, n2), c in zip(normals, offsets):
            na = n1 * a1 + n2 * a2 - c
            nd = n1 * d1 + n2 * d2
            par = np.abs(nd) <= _EPS * np.maximum(length, 1.0)
            outside |= par & (na >= -1e-12)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -na / nd
            t_in = np.where(~par & (nd < 0), np.maximum(t_in, t), t_in)
            t_out = np.where(~par & (nd > 0), np.minimum(t_out, t), t_out)
        return ~outside & ((t_out - t_in) * length > 1e-12)

    # -- geodesics in M minus the obstacle -------------------------------------

    def geodesic_from_point(self, y, x1, x2) -> np.ndarray:
        """Shortest-path length from the point ``y`` to each point x avoiding
        the obstacle interior."""
        y1, y2 = float(y[0]), float(y[1])
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        direct = np.hypot(x1 - y1, x2 - y2)
        if self.is_empty:
            return direct
        blocked = self.segment_blocked(y1, y2, x1, x2)
        if not blocked.any():
            return direct
        out = direct.copy()
        bx1, bx2 = x1[blocked], x2[blocked]
        if self.kind == "disk":
            out[blocked] = self._disk_wrap(y1, y2, bx1, bx2)
            return out
        v = self._vertices
        seed = np.hypot(v[:, 0] - y1, v[:, 1] - y2)
        seed[self.segment_blocked(y1, y2, v[:, 0], v[:, 1])] = np.inf
        out[blocked] = self._polygon_wrap(seed, bx1, bx2)
        return out

    def geodesic_from_gamma(self, x1, x2) -> np.ndarray:
        """Shortest-path length from each point x to the closed edge
        [0, 1] x {0} avoiding the obstacle interior."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        direct = x2.copy()
        if self.is_empty:
            return direct
        blocked = self.segment_blocked(x1, x2, x1, 0.0)
        if not blocked.any():
            return direct
        out = direct.copy()
        bx1, bx2 = x1[blocked], x2[blocked]
        if self.kind == "disk":
            cx, cy = self.center
            rho = self.size
            d = np.hypot(bx1 - cx, bx2 - cy)
            phi = np.arctan2(bx2 - cy, bx1 - cx)
            tangent = np.sqrt(np.maximum(d * d - rho * rho, 0.0))
            back = np.arccos(np.clip(rho / d, -1.0, 1.0))
            right = tangent + rho * np.maximum(phi - back, 0.0)
            left = tangent + rho * np.maximum(np.pi - phi - back, 0.0)
            out[blocked] = np.minimum(right, left) + cy
            return out
        v = self._vertices
        seed = v[:, 1].copy()
        seed[self.segment_blocked(v[:, 0], v[:, 1], v[:, 0], 0.0)] = np.inf
        out[blocked] = self._polygon_wrap(seed, bx1, bx2)
        return out

    def _disk_wrap(self, y1, y2, x1, x2):
        cx, cy = self.center
        rho = self.size
        dx = np.hypot(x1 - cx, x2 - cy)
        dy = math.hypot(y1 - cx, y2 - cy)
        cosang = ((x1 - cx) * (y1 - cx) + (x2 - cy) * (y2 - cy)) / (dx * dy)
        theta = np.arccos(np.clip(cosang, -1.0, 1.0))
        arc = theta - np.arccos(np.clip(rho / dx, -1, 1)) - math.acos(min(rho / dy, 1.0))
        return (np.sqrt(np.maximum(dx * dx - rho * rho, 0.0)) + math.sqrt(max(dy * dy - rho * rho, 0.0))
                + rho * np.maximum(arc, 0.0))

    def _polygon_wrap(self, seed, x1, x2):
        v = self._vertices
        nv = len(v)
        side = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
        dist = seed.copy()
        # relax around the boundary cycle; adjacent corners are mutually visible
        for _ in range(nv):
            for i in range(nv):
                j = (i + 1) % nv
                dist[j] = min(dist[j], dist[i] + side[i])
                dist[i] = min(dist[i], dist[j] + side[i])
        best = np.full(x1.shape, np.inf)
        for i in range(nv):
            vis = ~self.segment_blocked(x1, x2, v[i, 0], v[i, 1])
            cand = dist[i] + np.hypot(x1 - v[i, 0], x2 - v[i, 1])
            best = np.where(vis, np.minimum(best, cand), best)
        return best


SIGMA_EMPTY = Obstacle.none()
SIGMA_DISK = Obstacle.disk((0.5, 0.5), 0.3)
SIGMA_SQUARE = Obstacle.square((0.5, 0.5), 0.424, math.pi / 4)


def obstacle_preset(name: str) -> Obstacle:
    presets = {"none": SIGMA_EMPTY, "empty": SIGMA_EMPTY, "disk": SIGMA_DISK, "square": SIGMA_SQUARE}
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown obstacle preset {name!r}; choose from {sorted(presets)}") from None


# ---------------------------------------------------------------------------
# Boundary profiles tau in C_T(Gamma)
# ---------------------------------------------------------------------------


def _check_on_gamma(x1, x2=0.0):
    x1 = np.asarray(x1, dtype=float)
    if np.any(np.asarray(x2) != 0.0) or np.any((x1 < 0.0) | (x1 > 1.0)):
        raise ValueError("profile is only defined on the closed edge [0, 1] x {0}")
    return x1


@dataclass(frozen=True)
class HalfSpace:
    """Constant profile ``tau(x) = r``; M(tau) is the strip x2 <= r."""

    r: float
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.r <= self.T:
            raise ValueError(f"half-space depth must lie in [0, T], got r={self.r}")

    def value(self, x1, x2=0.0):
        x1 = _check_on_gamma(x1, x2)
        return np.full(x1.shape, float(self.r)) if x1.ndim else float(self.r)

    def with_radius(self, r: float) -> "HalfSpace":
        return HalfSpace(r, self.T)


@dataclass(frozen=True)
class DiskProbe:
    """``tau(x) = r - |x - y|`` clamped to [0, T]; M(tau) is B(y, r) intersected with M."""

    y1: float
    r: float
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.y1 <= 1.0:
            raise ValueError("probe center must lie on the closed edge [0, 1] x {0}")
        if not 0.0 <= self.r <= self.T:
            raise ValueError(f"probe radius must lie in [0, T], got r={self.r}")

    @property
    def y(self) -> tuple[float, float]:
        return (self.y1, 0.0)

    def value(self, x1, x2=0.0):
        x1 = _check_on_gamma(x1, x2)
        v = np.clip(self.r - np.abs(x1 - self.y1), 0.0, self.T)
        return v if v.ndim else float(v)

    def with_radius(self, r: float) -> "DiskProbe":
        return DiskProbe(self.y1, r, self.T)


BoundaryProfile = Union[HalfSpace, DiskProbe]


def profile_value(profile: BoundaryProfile, x) -> float:
    """Profile value at a point ``x = (x1, x2)`` on Gamma."""
    return profile.value(x[0], x[1])


# ---------------------------------------------------------------------------
# Domains of influence
# ---------------------------------------------------------------------------


def influence_mask(profile: BoundaryProfile, grid: RasterGrid) -> np.ndarray:
    """Cells whose centers lie in M(tau)."""
    x1, x2 = grid.centers()
    if isinstance(profile, HalfSpace):
        return x2 <= profile.r
    return np.hypot(x1 - profile.y1, x2) <= profile.r


def influence_mask_with_obstacle(profile: BoundaryProfile, obstacle: Obstacle, grid: RasterGrid,
                                 method: str = "exact") -> np.ndarray:
    """Cells whose centers lie in M_Sigma(tau).  Obstacle cells are never marked.

    ``method="exact"`` uses the closed-form shortest paths around the convex
    obstacle; ``method="dijkstra"`` uses the 8-neighbour graph of
    :func:`dijkstra_influence_mask`.
    """
    if method == "dijkstra":
        return dijkstra_influence_mask(profile, obstacle, grid)
    if method != "exact":
        raise ValueError(f"unknown distance method {method!r}")
    x1, x2 = grid.centers()
    free = ~obstacle.contains(x1, x2)
    if isinstance(profile, HalfSpace):
        d = obstacle.geodesic_from_gamma(x1, x2)
    else:
        d = obstacle.geodesic_from_point(profile.y, x1, x2)
    return free & (d <= profile.r)


def dijkstra_influence_mask(profile: BoundaryProfile, obstacle: Obstacle, grid: RasterGrid) -> np.ndarray:
    """M_Sigma(tau) from a multi-source shortest path on the 8-neighbour graph
    of cell centers.

    Gamma is represented by one node under each bottom-row cell, seeded with
    ``-tau``.  Graph distances overestimate Euclidean ones by up to about 8 %
    off the grid axes and diagonals, so this mask is a subset-biased check.
    """
    n = grid.n
    x1, x2 = grid.centers()
    free = ~obstacle.contains(x1, x2)
    ids = np.arange(n * n).reshape(n, n)
    h = grid.cell_size
    rows, cols, wts = [], [], []
    for dr, dc, w in ((0, 1, h), (1, 0, h), (1, 1, h * math.sqrt(2)), (1, -1, h * math.sqrt(2))):
        r0, r1 = slice(0, n - dr), slice(dr, n)
        lo, hi = max(0, -dc), n - max(0, dc)
        c0, c1 = slice(lo, hi), slice(lo + dc, hi + dc)
        ok = free[r0, c0] & free[r1, c1]
        rows.append(ids[r0, c0][ok])
        cols.append(ids[r1, c1][ok])
        wts.append(np.full(int(ok.sum()), w))
    # Gamma nodes n*n .. n*n+n-1 sit at ((i + 1/2) h, 0); super source is the last node
    g = n * n + np.arange(n)
    src = n * n + n
    tau = np.asarray(profile.value(grid.axis()), dtype=float)
    for dc in (-1, 0, 1):
        c = np.arange(n) + dc
        ok = (c >= 0) & (c < n) & free[0, np.clip(c, 0, n - 1)]
        rows.append(g[ok])
        cols.append(ids[0, c[ok]])
        wts.append(np.full(int(ok.sum()), math.hypot(dc * h, 0.5 * h)))
    shift = float(profile.T)
    rows.append(np.full(n, src))
    cols.append(g)
    wts.append(shift - tau + 1e-15)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    wts = np.concatenate(wts)
    size = n * n + n + 1
    adj = sparse.coo_matrix((wts, (rows, cols)), shape=(size, size)).tocsr()
    dist = csgraph.dijkstra(adj, directed=False, indices=src)
    value = dist[: n * n].reshape(n, n) - shift
    return free & (value <= 1e-12)


def exact_volume_M(profile: BoundaryProfile) -> float:
    """Area of M(tau) for the half-space and disk families (r <= 1)."""
    if profile.r > profile.T:
        raise ValueError("profile radius exceeds T")
    r = float(profile.r)
    if isinstance(profile, HalfSpace):
        return min(r, 1.0)
    if r > 1.0:
        raise ValueError("analytic disk area only covers r <= 1")

    def half_segment(a):
        if a >= r:
            return 0.0
        return 0.5 * (r * r * math.acos(a / r) - a * math.sqrt(r * r - a * a))

    return math.pi * r * r / 2 - half_segment(profile.y1) - half_segment(1.0 - profile.y1)


def distance_to_obstacle(y, obstacle: Obstacle) -> float:
    """Euclidean distance from the point ``y`` to the obstacle (0 inside)."""
    if obstacle.is_empty:
        raise ValueError("no obstacle: clearance is T by convention")
    return float(obstacle.distance(y[0], y[1]))


def clearance_radius(y, obstacle: Obstacle, T: float) -> float:
    """R_T(y) = min(T, dist(y, obstacle)), or T without an obstacle."""
    if obstacle.is_empty:
        return float(T)
    return min(float(T), distance_to_obstacle(y, obstacle))


def union_of_disks(centers1, radii, grid: RasterGrid) -> np.ndarray:
    """Cells whose centers lie in the union of closed disks B((c, 0), r)."""
    n = grid.n
    axis = grid.axis()
    mask = np.zeros((n, n), dtype=bool)
    for c, r in zip(np.asarray(centers1, float), np.asarray(radii, float)):
        if r <= 0:
            continue
        jmax = min(n, int(math.ceil(r * n)) + 1)
        i0 = max(0, int(math.floor((c - r) * n)) - 1)
        i1 = min(n, int(math.ceil((c + r) * n)) + 1)
        sub = (axis[:jmax, None] ** 2 + (axis[None, i0:i1] - c) ** 2) <= r * r
        mask[:jmax, i0:i1] |= sub
    return mask


def h_region_exact(obstacle: Obstacle, T: float, grid: RasterGrid, r_max: float | None = None,
                   samples: int | None = None) -> np.ndarray:
    """Raster of the visibility region: union over y in Gamma of
    B(y, R_T(y)) intersected with M, optionally with radii clipped at ``r_max``."""
    if samples is None:
        samples = 2 * grid.n + 1
    ys = np.linspace(0.0, 1.0, samples)
    if obstacle.is_empty:
        radii = np.full(samples, float(T))
    else:
        radii = np.minimum(T, obstacle.distance(ys, np.zeros_like(ys)))
    if r_max is not None:
        radii = np.minimum(radii, r_max)
    return union_of_disks(ys, radii, grid)
