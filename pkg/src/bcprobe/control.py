"""Boundary-control volume estimation.

Functions on (0, T) x Gamma are arrays ``f[j, k]`` of values on the slots
``[j h, (j + 1) h] x Gamma_k``; the L2 product weights every slot by
``h / N_x``.  Sample ``j`` is taken to sit at the window center
``(j + 1/2) h``, so time reversal on (0, T) is the exact index flip
``j -> N_T - 1 - j``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundaryProfile
from .measurement import MeasurementSet

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Time operators
# ---------------------------------------------------------------------------


def apply_time_reversal(x: np.ndarray) -> np.ndarray:
    """``R f(t) = f(T - t)`` on the sample grid of (0, T)."""
    return np.asarray(x)[::-1].copy()


def apply_J(x: np.ndarray, h: float) -> np.ndarray:
    """``J f(t) = 1/2 int_t^{2T-t} f(s) ds`` at the centers of the first half
    of the samples.

    The integration limits fall on sample centers, so the two end samples
    contribute half of their window.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n % 2:
        raise ValueError("J needs an even number of samples on (0, 2T)")
    nh = n // 2
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    i = np.arange(nh)
    inner = csum[n - 1 - i] - csum[i + 1]
    return 0.5 * h * (inner + 0.5 * x[i] + 0.5 * x[n - 1 - i])


def apply_J_half(f: np.ndarray, h: float) -> np.ndarray:
    """``J Theta f`` for ``f`` given on (0, T) (zero extension to (0, 2T))."""
    f = np.asarray(f, dtype=float)
    nh = f.shape[0]
    # for t < T only the part of [t, T] carries f
    csum = np.concatenate([np.zeros((1,) + f.shape[1:]), np.cumsum(f, axis=0)])
    i = np.arange(nh)
    return 0.5 * h * (csum[nh] - csum[i + 1] + 0.5 * f[i])


def apply_K(f: np.ndarray, data: MeasurementSet, receivers: np.ndarray | None = None) -> np.ndarray:
    """Connecting operator ``K = J L_2T Theta - R L_T R J Theta`` on slot arrays.

    ``f`` has shape (N_T, N_x).  ``R J Theta f`` is represented by its values
    at the slot centers, i.e. projected back onto the pulse span.  With
    ``receivers`` only those output columns are evaluated.
    """
    cfg = data.config
    h = cfg.dt_samp
    nh = cfg.n_half
    f = np.asarray(f, dtype=float)
    term1 = apply_J(data.synthesize(f, cfg.n_t, receivers), h)
    g = apply_time_reversal(apply_J_half(f, h))
    term2 = apply_time_reversal(data.synthesize(g, nh, receivers))
    return term1 - term2


def slot_inner(a: np.ndarray, b: np.ndarray, h: float) -> float:
    """L2((0, T) x Gamma) product of two slot arrays."""
    return float(np.sum(a * b) * h / a.shape[1])


# ---------------------------------------------------------------------------
# Index sets S_tau and the right-hand side
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class STauIndex:
    """Slots ``(j, k)`` with ``[j h, (j + 1) h]`` inside ``[T - tau(x_k), T]``."""

    profile: BoundaryProfile
    mask: np.ndarray
    h: float
    T: float

    @classmethod
    def build(cls, profile: BoundaryProfile, n_x: int, n_t: int, T: float) -> "STauIndex":
        h = 2.0 * T / n_t
        nh = n_t // 2
        xk = (np.arange(n_x) + 0.5) / n_x
        tau = np.atleast_1d(profile.value(xk)).astype(float)
        start = T - (np.arange(nh) * h)[:, None]  # time remaining from each slot's left edge
        mask = start <= tau[None, :] + 1e-9 * h
        mask.setflags(write=False)
        return cls(profile, mask, h, T)

    @classmethod
    def for_data(cls, profile: BoundaryProfile, data: MeasurementSet) -> "STauIndex":
        cfg = data.config
        return cls.build(profile, cfg.n_x, cfg.n_t, cfg.T)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def receivers(self) -> np.ndarray:
        """Receiver columns that carry at least one slot."""
        return np.flatnonzero(self.mask.any(axis=0))

    @property
    def slot_measure(self) -> float:
        return self.h / self.mask.shape[1]

    def slots(self) -> np.ndarray:
        """Array of ``(j, k)`` pairs in row-major order."""
        return np.argwhere(self.mask)


def assemble_rhs_b(index: STauIndex) -> np.ndarray:
    """Slot means of ``b(t) = T - t`` restricted to S_tau (zero elsewhere)."""
    nh = index.mask.shape[0]
    t_left = np.arange(nh) * index.h
    b = (index.T - t_left - 0.5 * index.h)[:, None] * np.ones(index.mask.shape[1])
    return np.where(index.mask, b, 0.0)


def apply_K_tau(f: np.ndarray, index: STauIndex, data: MeasurementSet) -> np.ndarray:
    """``K_tau f = (K f)|_{S_tau}`` for ``f`` supported in S_tau."""
    cols = index.receivers
    return np.where(index.mask, apply_K(np.where(index.mask, f, 0.0), data, cols), 0.0)


def assemble_K_tau(index: STauIndex, data: MeasurementSet, max_slots: int = 1500) -> np.ndarray:
    """Dense Galerkin matrix ``G[a, b] = (K e_b)_a`` over the slots of S_tau."""
    slots = index.slots()
    if len(slots) > max_slots:
        raise ValueError(f"{len(slots)} slots exceed the dense assembly limit {max_slots}")
    nh, n_x = index.mask.shape
    G = np.empty((len(slots), len(slots)))
    e = np.zeros((nh, n_x))
    for col, (j, k) in enumerate(slots):
        e[j, k] = 1.0
        G[:, col] = apply_K(e, data, index.receivers)[index.mask]
        e[j, k] = 0.0
    return G


# ---------------------------------------------------------------------------
# Regularized CG
# ---------------------------------------------------------------------------


@dataclass
class ControlSolution:
    coefficients: np.ndarray
    volume_estimate: float
    cg_iterations: int
    alpha: float
    slot_count: int
    residual_history: list[float] = field(default_factory=list)
    volume_history: list[float] = field(default_factory=list)
    indefinite: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["alpha", "n_cg", "slot_count", "volume_estimate"]
                   + [f"residual_{i}" for i in range(len(self.residual_history))])
        w.writerow([repr(self.alpha), self.cg_iterations, self.slot_count, repr(self.volume_estimate)]
                   + [repr(r) for r in self.residual_history])
        return buf.getvalue()


def solve_control(index: STauIndex, data: MeasurementSet, alpha: float = 0.0, n_cg: int = 10,
                  rtol: float = 1e-12, reorthogonalize: bool | None = None) -> ControlSolution:
    """CG for ``(K_tau + alpha) f = b`` from ``f = 0`` with at most ``n_cg`` steps.

    The slot measure is uniform, so CG in the weighted product reduces to CG
    on the coefficient arrays; it re-enters only through ``(f, b)``.  A
    direction of nonpositive curvature stops the iteration and flags the
    result.

    With ``reorthogonalize`` every residual is orthogonalized against the
    previous ones.  For symmetric K_tau this only removes rounding, which plain
    CG amplifies by roughly a factor 30 per step on these ill-conditioned
    systems.  Noise makes K_tau nonsymmetric, and then the two variants differ:
    plain CG regularizes more strongly and detects obstacles far better.  The
    default (``None``) therefore reorthogonalizes exactly when the data are
    noiseless.
    """
    if reorthogonalize is None:
        reorthogonalize = data.noise is None
    if index.size == 0:
        raise ValueError("empty index set S_tau")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    mask = index.mask
    h = index.h
    b = assemble_rhs_b(index)

    def op(v):
        return apply_K_tau(v, index, data) + alpha * v

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(np.sum(r * r))
    r0 = math.sqrt(rr)
    basis = [r / r0] if reorthogonalize else None
    residuals = [1.0]
    volumes = [0.0]
    indefinite = False
    it = 0
    while it < n_cg:
        if math.sqrt(rr) <= rtol * r0:
            break
        q = op(p)
        curv = float(np.sum(p * q))
        if not curv > 0.0:
            indefinite = True
            log.debug("nonpositive curvature %.3e at CG step %d", curv, it + 1)
            break
        step = rr / curv
        x += step * p
        r -= step * q
        if basis is not None:
            for v in basis:
                r -= float(np.sum(v * r)) * v
        rr_new = float(np.sum(r * r))
        if basis is not None and rr_new > 0.0:
            basis.append(r / math.sqrt(rr_new))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        residuals.append(math.sqrt(rr) / r0)
        volumes.append(slot_inner(x, b, h))
    volume = slot_inner(x, b, h)
    return ControlSolution(np.where(mask, x, 0.0), volume, it, float(alpha), index.size,
                           residuals, volumes, indefinite)


# ---------------------------------------------------------------------------
# Abstract Tikhonov limit
# ---------------------------------------------------------------------------


@dataclass
class TikhonovReport:
    alphas: np.ndarray
    errors: np.ndarray
    rank: int

    def nonincreasing(self, slack: float = 1e-12) -> bool:
        """Errors shrink as alpha decreases along the given (decreasing) grid."""
        return bool(np.all(np.diff(self.errors) <= slack))


def tikhonov_limit_check(A: np.ndarray, y: np.ndarray, alphas) -> TikhonovReport:
    """``|A x_alpha - P y|`` for ``x_alpha = (A^T A + alpha)^{-1} A^T y``, with P the
    orthogonal projection onto the range of A."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    Ur = U[:, :rank]
    Py = Ur @ (Ur.T @ y)
    uy = U.T @ y
    errors = []
    for a in alphas:
        # SVD filter factors give x_alpha without forming the normal matrix
        x = Vt.T @ (s / (s * s + a) * uy)
        errors.append(float(np.linalg.norm(A @ x - Py)))
    return TikhonovReport(np.asarray(alphas, dtype=float), np.asarray(errors), rank)
