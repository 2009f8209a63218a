"""Explicit finite-difference wave solver on the unit square.

The field lives on the (n+1) x (n+1) nodes ``(i dx, j dx)``; row ``j = 0`` is
the measurement edge Gamma.  Each node carries the area of its dual cell as
mass weight (trapezoid weights: 1/2 on edges, 1/4 at corners) and neighbouring
nodes are coupled through the length of their shared dual face.  With these
weights the homogeneous Neumann condition is the usual ghost-node mirror
(``u_{-1} = u_1 + 2 dx f`` on Gamma) and the semi-discrete operator is
self-adjoint in the weighted inner product.

Obstacle nodes are removed together with their edges, which puts a zero-flux
staircase wall half a cell outside the removed nodes.

Time stepping is leapfrog with ``dt = dt_samp / m``.  A pulse on the slot
``[j h, (j + 1) h]`` enters step ``n`` with weight
``|[t_n - dt/2, t_n + dt/2] & [j h, (j + 1) h]| / dt``, and every recorded
sample is the trapezoid average of the receiver value across its sampling
window.  Both rules are exactly invariant under shifts by whole samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import Obstacle


class SolverConfigError(ValueError):
    """The simulation grid violates the stability or sampling constraints."""


class SolverDivergence(RuntimeError):
    """Non-finite values appeared during time stepping."""


@dataclass(frozen=True)
class SimGrid:
    n_space: int
    dt: float

    @property
    def dx(self) -> float:
        return 1.0 / self.n_space

    @property
    def courant(self) -> float:
        return self.dt * math.sqrt(2.0) / self.dx

    @classmethod
    def for_sampling(cls, n_space: int, dt_samp: float, courant_dt: float = 0.5) -> "SimGrid":
        """Largest step ``dt_samp / m`` not exceeding ``courant_dt * dx``."""
        if n_space < 2:
            raise SolverConfigError("n_space must be at least 2")
        dx = 1.0 / n_space
        m = max(1, math.ceil(dt_samp / (courant_dt * dx) - 1e-9))
        return cls(n_space, dt_samp / m)

    def substeps(self, dt_samp: float) -> int:
        m = int(round(dt_samp / self.dt))
        if m < 1 or abs(m * self.dt - dt_samp) > 1e-9 * dt_samp:
            raise SolverConfigError(f"dt={self.dt} does not divide the sampling interval {dt_samp}")
        return m

    def validate(self):
        if self.n_space < 2:
            raise SolverConfigError("n_space must be at least 2")
        if not self.courant < 1.0:
            raise SolverConfigError(f"unstable grid: courant number {self.courant:.4f} >= 1")


@dataclass(frozen=True)
class NeumannSource:
    """Piecewise-constant boundary flux ``sum_jk c[j, k] f_k(t - j h, x)``.

    ``coefficients`` has shape (time slots, N_x); slot ``j`` covers
    ``[j h, (j + 1) h]`` and receiver cell ``k`` covers ``[k/N_x, (k+1)/N_x]``.
    """

    coefficients: np.ndarray
    h: float
    amplitude: float = 1.0

    @property
    def n_x(self) -> int:
        return self.coefficients.shape[1]

    @classmethod
    def pulse(cls, k: int, n_x: int, h: float, slot: int = 0, amplitude: float = 1.0) -> "NeumannSource":
        c = np.zeros((slot + 1, n_x))
        c[slot, k] = 1.0
        return cls(c, h, amplitude)

    @classmethod
    def zero(cls, n_x: int, h: float) -> "NeumannSource":
        return cls(np.zeros((1, n_x)), h)


@dataclass(frozen=True)
class BoundaryTrace:
    """Receiver records ``samples[j, k]``: the field averaged over the sampling
    window ``[j h, (j + 1) h]`` at receiver ``k``."""

    samples: np.ndarray
    dt_samp: float

    @property
    def n_t(self) -> int:
        return self.samples.shape[0]

    @property
    def n_x(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_t) + 0.5) * self.dt_samp


def _dual_lengths(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


def boundary_weights(n_space: int, n_x: int) -> np.ndarray:
    """Overlap lengths ``B[k, i] = |dual segment of node i  &  Gamma_k|``."""
    dx = 1.0 / n_space
    x = np.arange(n_space + 1) * dx
    lo = np.clip(x - dx / 2, 0.0, 1.0)
    hi = np.clip(x + dx / 2, 0.0, 1.0)
    edges = np.arange(n_x + 1) / n_x
    a = np.maximum(lo[None, :], edges[:-1, None])
    b = np.minimum(hi[None, :], edges[1:, None])
    return np.maximum(b - a, 0.0)


def point_receiver_weights(n_space: int, n_x: int) -> np.ndarray:
    """Linear interpolation weights picking the field at x_k = (k - 1/2)/N_x."""
    xk = (np.arange(n_x) + 0.5) / n_x
    s = xk * n_space
    i0 = np.floor(s).astype(int)
    frac = s - i0
    w = np.zeros((n_x, n_space + 1))
    w[np.arange(n_x), i0] += 1.0 - frac
    w[np.arange(n_x), np.minimum(i0 + 1, n_space)] += frac
    return w


class Domain:
    """Node weights, edge couplings and boundary operators for one obstacle."""

    def __init__(self, n_space: int, obstacle: Obstacle, n_x: int, receivers: str = "average"):
        n = n_space
        self.n = n
        self.dx = 1.0 / n
        xs = np.arange(n + 1) * self.dx
        x1, x2 = np.meshgrid(xs, xs, indexing="xy")
        self.active = ~obstacle.contains(x1, x2)
        dl = _dual_lengths(n)
        self.weights = np.outer(dl, dl) * self.dx**2 * self.active
        self.inv_w = np.zeros_like(self.weights)
        np.divide(1.0, self.weights, out=self.inv_w, where=self.active)
        a = self.active.astype(float)
        # x-edges (j, i)-(j, i+1): dual face length dl[j] * dx, divided by dx
        self.cx = dl[:, None] * a[:, 1:] * a[:, :-1]
        self.cy = dl[None, :] * a[1:, :] * a[:-1, :]
        self.source_weights = boundary_weights(n, n_x) * self.active[0][None, :]
        if receivers == "average":
            self.receiver_weights = boundary_weights(n, n_x) * n_x
        elif receivers == "point":
            self.receiver_weights = point_receiver_weights(n, n_x)
        else:
            raise ValueError(f"unknown receiver model {receivers!r}")

        self.operator = self._assemble()

    def _assemble(self) -> sparse.csr_matrix:
        """``W^{-1} (-A)`` as a sparse matrix on row-major node indices."""
        n1 = self.n + 1
        idx = np.arange(n1 * n1).reshape(n1, n1)
        rows, cols, vals = [], [], []
        for c, a, b in ((self.cx, idx[:, :-1], idx[:, 1:]), (self.cy, idx[:-1, :], idx[1:, :])):
            keep = c.ravel() > 0
            c, a, b = c.ravel()[keep], a.ravel()[keep], b.ravel()[keep]
            rows += [a, b, a, b]
            cols += [b, a, a, b]
            vals += [c, c, -c, -c]
        A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n1 * n1, n1 * n1)).tocsr()
        return (sparse.diags(self.inv_w.ravel()) @ A).tocsr()

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Discrete Neumann Laplacian of a node field of shape (n+1, n+1)."""
        return (self.operator @ u.ravel()).reshape(u.shape)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Weighted L2 inner product over M minus the obstacle."""
        return float(np.sum(self.weights * u * v))

    def energy(self, u_prev: np.ndarray, u: np.ndarray, dt: float) -> float:
        """Leapfrog-conserved energy between two consecutive steps."""
        kin = 0.5 * np.sum(self.weights * ((u - u_prev) / dt) ** 2)
        pot = 0.5 * (np.sum(self.cx * np.diff(u, axis=1) * np.diff(u_prev, axis=1))
                     + np.sum(self.cy * np.diff(u, axis=0) * np.diff(u_prev, axis=0)))
        return float(kin + pot)


def pulse_step_weights(m: int) -> np.ndarray:
    """Step weights of the unit pulse on [0, m dt] for steps 0..m."""
    w = np.ones(m + 1)
    w[0] = w[-1] = 0.5
    return w


def _step_amplitudes(coefficients: np.ndarray, m: int, n_steps: int) -> np.ndarray:
    """Per-step, per-cell flux amplitude ``a[n, k]`` of a slot source."""
    n_slots, n_x = coefficients.shape
    a = np.zeros((max(n_steps, n_slots * m + 1) + 1, n_x))
    w = pulse_step_weights(m)
    for q, wq in enumerate(w):
        a[q: q + n_slots * m: m] += wq * coefficients
    return a[: n_steps + 1]


def run(domain: Domain, amplitudes: np.ndarray, n_steps: int, dt: float, m: int,
        record: bool = True, snapshot_steps=()):
    """Leapfrog integration of a batch of sources.

    ``amplitudes`` has shape (batch, steps + 1, N_x).  Returns the receiver
    samples ``(batch, n_steps // m, N_x)``, the field at the last step, the
    requested snapshots keyed by step, and the field one step earlier.
    """
    batch = amplitudes.shape[0]
    n1 = domain.n + 1
    nodes = n1 * n1
    u_prev = np.zeros((nodes, batch))
    u = np.zeros((nodes, batch))
    dt2 = dt * dt
    src = (domain.inv_w[0] * domain.source_weights).T * dt2  # (n+1, N_x)
    amps = np.ascontiguousarray(np.transpose(amplitudes, (1, 2, 0)))  # (steps+1, N_x, batch)
    rec_w = domain.receiver_weights  # (N_x, n+1)
    rec = np.zeros((n_steps + 1, rec_w.shape[0], batch))
    op = domain.operator
    snaps = {}
    wanted = set(snapshot_steps)

    def as_fields(v):
        return np.ascontiguousarray(v.T).reshape(batch, n1, n1)

    for step in range(n_steps):
        lap = op @ u
        lap *= dt2
        lap[:n1] += src @ amps[step]
        # u_prev becomes u_next in place
        u_prev *= -1.0
        u_prev += u
        u_prev += u
        u_prev += lap
        u_prev, u = u, u_prev
        if record:
            rec[step + 1] = rec_w @ u[:n1]
        if step + 1 in wanted:
            snaps[step + 1] = as_fields(u)
        if step % 64 == 63 and not np.isfinite(u).all():
            raise SolverDivergence(f"non-finite field at step {step + 1}")
    if not np.isfinite(u).all():
        raise SolverDivergence("non-finite field at final step")
    samples = None
    if record:
        n_s = n_steps // m
        w = pulse_step_weights(m) / m
        acc = np.zeros((n_s, rec_w.shape[0], batch))
        for q, wq in enumerate(w):
            acc += wq * rec[q: q + n_s * m: m]
        samples = np.ascontiguousarray(np.transpose(acc, (2, 0, 1)))
    return samples, as_fields(u), snaps, as_fields(u_prev)


def _prepare(source: NeumannSource, duration: float, grid: SimGrid):
    grid.validate()
    m = grid.substeps(source.h)
    n_slots_f = duration / source.h
    n_samples = int(round(n_slots_f))
    if abs(n_samples - n_slots_f) > 1e-9:
        raise SolverConfigError("duration must be a whole number of sampling intervals")
    n_steps = n_samples * m
    amps = _step_amplitudes(source.amplitude * np.asarray(source.coefficients, float), m, n_steps)
    return m, n_steps, amps


def step_simulation(source: NeumannSource, obstacle: Obstacle, duration: float, grid: SimGrid,
                    receivers: str = "average") -> tuple[BoundaryTrace, np.ndarray]:
    """Simulate one source over ``[0, duration]``; return its trace and u(duration)."""
    m, n_steps, amps = _prepare(source, duration, grid)
    domain = Domain(grid.n_space, obstacle, source.n_x, receivers)
    samples, u, _, _ = run(domain, amps[None], n_steps, grid.dt, m)
    return BoundaryTrace(samples[0], source.h), u[0]


def interior_snapshot(source: NeumannSource, obstacle: Obstacle, at: float, grid: SimGrid) -> np.ndarray:
    """The field u^f(at) on the grid nodes (zero on obstacle nodes)."""
    m, n_steps, amps = _prepare(source, at, grid)
    domain = Domain(grid.n_space, obstacle, source.n_x)
    _, u, _, _ = run(domain, amps[None], n_steps, grid.dt, m, record=False)
    return u[0]


def interior_snapshots(sources: list[NeumannSource], obstacle: Obstacle, at: float, grid: SimGrid) -> np.ndarray:
    """Batched :func:`interior_snapshot`; all sources must share ``h``."""
    prepared = [_prepare(s, at, grid) for s in sources]
    m, n_steps = prepared[0][0], prepared[0][1]
    amps = np.stack([p[2] for p in prepared])
    domain = Domain(grid.n_space, obstacle, sources[0].n_x)
    _, u, _, _ = run(domain, amps, n_steps, grid.dt, m, record=False)
    return u


def field_inner(u: np.ndarray, v: np.ndarray, n_space: int, obstacle: Obstacle) -> float:
    """Weighted L2(M minus obstacle) inner product of two node fields."""
    dl = _dual_lengths(n_space)
    dx = 1.0 / n_space
    xs = np.arange(n_space + 1) * dx
    x1, x2 = np.meshgrid(xs, xs, indexing="xy")
    w = np.outer(dl, dl) * dx**2 * ~obstacle.contains(x1, x2)
    return float(np.sum(w * u * v))


_BASIS_CHUNK = 5


def _basis_chunk(args):
    obstacle, n_space, n_x, receivers, dt, m, n_steps, amplitude, ks = args
    eye = np.eye(n_x)
    amps = np.stack([_step_amplitudes(amplitude * eye[k][None, :], m, n_steps) for k in ks])
    domain = Domain(n_space, obstacle, n_x, receivers)
    samples, _, _, _ = run(domain, amps, n_steps, dt, m)
    return samples / amplitude


def simulate_basis(obstacle: Obstacle, cfg, grid: SimGrid | None = None, receivers: str = "average",
                   amplitude: float = 1.0, workers: int = 1):
    """Run the N_x pulses ``f_k`` over [0, 2T] and collect the Neumann-to-
    Dirichlet records into a :class:`~bcprobe.measurement.MeasurementSet`.

    Pulses are fired with flux ``amplitude`` and the records are divided by
    it, so the stored data always describe unit pulses.  Sources are
    simulated in fixed chunks; ``workers`` only distributes the chunks, so
    the result does not depend on it.
    """
    from .measurement import MeasurementSet

    if not (math.isfinite(amplitude) and amplitude != 0.0):
        raise SolverConfigError("pulse amplitude must be finite and nonzero")
    h = cfg.dt_samp
    if grid is None:
        grid = SimGrid.for_sampling(cfg.n_space, h)
    grid.validate()
    m = grid.substeps(h)
    n_steps = cfg.n_t * m
    chunks = [tuple(range(k, min(k + _BASIS_CHUNK, cfg.n_x))) for k in range(0, cfg.n_x, _BASIS_CHUNK)]
    tasks = [(obstacle, grid.n_space, cfg.n_x, receivers, grid.dt, m, n_steps, float(amplitude), ks)
             for ks in chunks]
    if workers > 1 and len(tasks) > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(tasks)),
                                 mp_context=mp.get_context("fork")) as pool:
            parts = list(pool.map(_basis_chunk, tasks))
    else:
        parts = [_basis_chunk(t) for t in tasks]
    return MeasurementSet(cfg, np.concatenate(parts, axis=0), obstacle)
