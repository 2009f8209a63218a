"""Discretized Neumann-to-Dirichlet data.

A :class:`MeasurementSet` holds one record per basis pulse ``f_k`` (unit flux
on the receiver cell ``Gamma_k`` during the first sampling interval).  Any
source in the pulse span is a sum of shifted basis pulses, so its response is
assembled from the stored records by linearity and time invariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .geometry import Obstacle
from .solver import BoundaryTrace


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementConfig:
    n_x: int = 20
    n_t: int = 800
    T: float = 1.0
    n_space: int = 400

    def __post_init__(self):
        if self.n_x < 1:
            raise MeasurementError("need at least one receiver")
        if self.n_t < 2 or self.n_t % 2:
            raise MeasurementError("n_t must be a positive even number")
        if not self.T > 0:
            raise MeasurementError("T must be positive")
        if self.n_space < 2:
            raise MeasurementError("n_space must be at least 2")

    @property
    def dt_samp(self) -> float:
        return 2.0 * self.T / self.n_t

    @property
    def n_half(self) -> int:
        """Number of samples on (0, T)."""
        return self.n_t // 2

    @property
    def receivers(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) / self.n_x


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int
    measured_power_db: tuple[float, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise MeasurementError("snr_db must be finite")


def voronoi_cells(n_x: int) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Receiver centers ``x_k`` and their cells ``Gamma_k`` on the bottom edge."""
    if n_x < 1:
        raise MeasurementError("need at least one receiver")
    return [(((k + 0.5) / n_x, 0.0), (k / n_x, (k + 1) / n_x)) for k in range(n_x)]


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Basis responses ``traces[k, j, r]``: pulse on cell k, sample j, receiver r."""

    config: MeasurementConfig
    traces: np.ndarray
    obstacle: Obstacle = field(default_factory=Obstacle.none)
    noise: NoiseSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        cfg = self.config
        tr = np.array(self.traces, dtype=np.float64, copy=True)
        if tr.shape != (cfg.n_x, cfg.n_t, cfg.n_x):
            raise MeasurementError(f"trace array shape {tr.shape} does not match config "
                                   f"({cfg.n_x}, {cfg.n_t}, {cfg.n_x})")
        if not np.isfinite(tr).all():
            raise MeasurementError("non-finite samples in measurement set")
        tr.setflags(write=False)
        object.__setattr__(self, "traces", tr)

    @property
    def cell_widths(self) -> np.ndarray:
        return np.full(self.config.n_x, 1.0 / self.config.n_x)

    def trace(self, k: int) -> BoundaryTrace:
        return BoundaryTrace(self.traces[k], self.config.dt_samp)

    def compatible_with(self, other: "MeasurementSet") -> bool:
        return self.config == other.config

    def _spectrum(self, nfft: int) -> np.ndarray:
        spec = self._cache.get(nfft)
        if spec is None:
            spec = sfft.rfft(self.traces, n=nfft, axis=1)  # (k, w, r)
            spec = np.ascontiguousarray(spec.transpose(1, 0, 2))  # (w, k, r)
            self._cache[nfft] = spec
        return spec

    def synthesize(self, coeffs: np.ndarray, length: int | None = None,
                   receivers: np.ndarray | None = None) -> np.ndarray:
        """Response ``sum_jk c[j, k] lambda_k(t - j h)`` on the first ``length`` samples.

        ``coeffs`` has shape (slots, N_x) with slot ``j`` starting at ``j h``;
        slots must lie inside (0, T).  With ``receivers`` (an index array)
        only those columns are computed and the rest are left zero.
        """
        cfg = self.config
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 2 or c.shape[1] != cfg.n_x:
            raise MeasurementError(f"coefficient array must have shape (slots, {cfg.n_x})")
        if c.shape[0] > cfg.n_half:
            raise MeasurementError("source slots extend beyond (0, T)")
        if length is None:
            length = cfg.n_t
        nfft = sfft.next_fast_len(cfg.n_t + cfg.n_half, real=True)
        spec = self._spectrum(nfft)
        sources = np.flatnonzero(np.any(c != 0.0, axis=0))
        out = np.zeros((length, cfg.n_x))
        if sources.size == 0:
            return out
        if receivers is None:
            receivers = np.arange(cfg.n_x)
        sub = spec[:, sources][:, :, receivers] if receivers.size < cfg.n_x else spec[:, sources]
        chat = sfft.rfft(c[:, sources], n=nfft, axis=0)  # (w, k)
        resp = sfft.irfft(np.einsum("wk,wkr->wr", chat, sub), n=nfft, axis=0)[:length]
        out[:, receivers] = resp
        return out

    def synthesize_response(self, coeffs: np.ndarray) -> BoundaryTrace:
        return BoundaryTrace(self.synthesize(coeffs), self.config.dt_samp)


def synthesize_response(coeffs, data: MeasurementSet) -> BoundaryTrace:
    """Response on [0, 2T] to the slot source ``coeffs`` (slots x N_x)."""
    return data.synthesize_response(coeffs)


def noise_variance_ratio(snr_db: float) -> float:
    """sigma^2 / P for a given SNR in decibels."""
    return 10.0 ** (-snr_db / 10.0)


def add_awgn(data: MeasurementSet, snr_db: float, seed: int) -> MeasurementSet:
    """Add white Gaussian noise to every basis record at the given SNR.

    Signal power is measured per record as the mean square over all of its
    samples, as the 'measured' option of Matlab's ``awgn`` does.
    """
    if data.noise is not None:
        raise MeasurementError("measurement set is already noisy")
    rng = np.random.default_rng(seed)
    noisy = np.empty_like(data.traces)
    powers = []
    ratio = noise_variance_ratio(snr_db)
    for k, rec in enumerate(data.traces):
        p = float(np.mean(rec**2))
        powers.append(10.0 * math.log10(p) if p > 0 else -math.inf)
        noisy[k] = rec + rng.normal(0.0, math.sqrt(p * ratio), size=rec.shape)
    spec = NoiseSpec(float(snr_db), int(seed), tuple(powers))
    return replace(data, traces=noisy, noise=spec, _cache={})


def boundary_inner_product(a, b, T: float | None = None) -> float:
    """Rectangle-rule L2((0, T) x Gamma) product of two traces.

    Samples are window averages centered at ``(j + 1/2) h``; only samples with
    center at most ``T`` contribute.  Receivers have equal cell widths.
    """
    if isinstance(a, BoundaryTrace) and isinstance(b, BoundaryTrace):
        if a.samples.shape != b.samples.shape or abs(a.dt_samp - b.dt_samp) > 1e-15:
            raise MeasurementError("traces have different sampling")
        h = a.dt_samp
        a, b = a.samples, b.samples
    else:
        raise MeasurementError("boundary_inner_product expects two BoundaryTrace objects")
    n_t, n_x = a.shape
    if T is None:
        T = n_t * h
    keep = int(math.floor(T / h + 1e-9))
    return float(np.sum(a[:keep] * b[:keep]) * h / n_x)
