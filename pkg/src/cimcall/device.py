"""PCM device physics for compute-in-memory tiles.

Models the unit-cell behavior that matters for inference accuracy:
signed weight-to-conductance mapping onto differential device pairs,
one-shot programming noise, per-read noise, power-law conductance
drift, and the analog vector-matrix multiply with PWM inputs and ADC
output quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DeviceParams",
    "ConductancePair",
    "ProgrammedTile",
    "map_weight_to_conductance",
    "map_weights_to_conductances",
    "apply_programming_noise",
    "apply_drift",
    "drift_factor",
    "program_tile",
    "analog_vmm",
]


@dataclass(frozen=True)
class DeviceParams:
    """Unit-cell and converter parameters for one tile generation.

    Conductances are in microsiemens. The noise standard deviations are
    absolute, in the same unit as ``g_max``; whether they should instead
    be read relative to ``g_max`` is ambiguous, so both are plain
    configurable numbers. ``drift_nu`` is the dimensionless drift
    exponent of the power-law conductance decay and ``t0`` the reference
    time at which drifted conductance equals the programmed value.
    """

    g_max: float = 25.0
    sigma_prog: float = 1.0
    sigma_read: float = 0.1
    drift_nu: float = 0.06
    t0: float = 20.0
    adc_bits: int = 10
    input_bits: int = 8

    def __post_init__(self):
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        if self.sigma_prog < 0 or self.sigma_read < 0:
            raise ValueError("noise std-dev must be non-negative")
        if self.drift_nu < 0:
            raise ValueError("drift_nu must be non-negative")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.adc_bits < 2 or self.input_bits < 2:
            raise ValueError("converter widths must be at least 2 bits")

    @property
    def adc_lo(self) -> int:
        return -(1 << (self.adc_bits - 1))

    @property
    def adc_hi(self) -> int:
        return (1 << (self.adc_bits - 1)) - 1

    @property
    def input_hi(self) -> int:
        return (1 << (self.input_bits - 1)) - 1


@dataclass
class ConductancePair:
    """Differential PCM pair encoding one signed weight.

    At most one of the two devices is nonzero at programming time;
    positive weights live on ``g_plus``, negative on ``g_minus``.
    """

    g_plus: float
    g_minus: float
    t_programmed: float = 0.0


@dataclass
class ProgrammedTile:
    """One crossbar tile holding a block of conductance pairs.

    The tile is always physically ``size x size`` (512 by default); only
    the leading ``rows_used x cols_used`` sub-block carries weights.
    ``col_scale`` / ``col_offset`` are the per-column digital affine
    correction applied after the ADC; the calibration procedure that
    produces them is outside the device model, they are taken as given.
    """

    g_plus: np.ndarray
    g_minus: np.ndarray
    col_scale: np.ndarray
    col_offset: np.ndarray
    rows_used: int
    cols_used: int
    t_programmed: float = 0.0
    size: int = 512
    saturation_count: int = 0

    def __post_init__(self):
        shape = (self.size, self.size)
        if self.g_plus.shape != shape or self.g_minus.shape != shape:
            raise ValueError(f"tile conductance arrays must be {shape}")
        if self.col_scale.shape != (self.size,) or self.col_offset.shape != (self.size,):
            raise ValueError(f"per-column correction arrays must be ({self.size},)")
        if not (0 <= self.rows_used <= self.size and 0 <= self.cols_used <= self.size):
            raise ValueError("rows_used/cols_used out of tile bounds")


def map_weight_to_conductance(w: float, w_max: float, params: DeviceParams) -> ConductancePair:
    """Encode a signed weight onto a differential pair, noise free.

    Weights beyond ``w_max`` clip; clipping is defined behavior and is
    counted at tile level rather than raised. The noise-free decode
    ``(g_plus - g_minus) * w_max / g_max`` reproduces ``clip(w, +-w_max)``.
    """
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    w = float(np.clip(w, -w_max, w_max))
    g = abs(w) / w_max * params.g_max
    if w >= 0:
        return ConductancePair(g_plus=g, g_minus=0.0)
    return ConductancePair(g_plus=0.0, g_minus=g)


def map_weights_to_conductances(weights: np.ndarray, w_max: float, params: DeviceParams):
    """Vectorized pair mapping. Returns (g_plus, g_minus, n_saturated)."""
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    w = np.asarray(weights, dtype=np.float64)
    n_saturated = int(np.count_nonzero(np.abs(w) > w_max))
    w = np.clip(w, -w_max, w_max)
    g = np.abs(w) / w_max * params.g_max
    g_plus = np.where(w >= 0, g, 0.0)
    g_minus = np.where(w < 0, g, 0.0)
    return g_plus, g_minus, n_saturated


def _noise_nonzero(g: np.ndarray, sigma: float, g_max: float, rng: np.random.Generator):
    """Gaussian perturbation of nonzero conductances, clipped to [0, g_max]."""
    if sigma == 0:
        return g.copy()
    noisy = g + rng.normal(0.0, sigma, size=g.shape)
    noisy = np.clip(noisy, 0.0, g_max)
    return np.where(g == 0.0, 0.0, noisy)


def apply_programming_noise(
    pair: ConductancePair, params: DeviceParams, rng: np.random.Generator
) -> ConductancePair:
    """One-shot write noise: each nonzero device lands near its target.

    Zero-programmed devices stay exactly zero (they are never pulsed).
    Sampled once at program time; contrast with read noise, which is
    fresh on every VMM.
    """
    gp = _noise_nonzero(np.array([pair.g_plus]), params.sigma_prog, params.g_max, rng)[0]
    gm = _noise_nonzero(np.array([pair.g_minus]), params.sigma_prog, params.g_max, rng)[0]
    return ConductancePair(g_plus=float(gp), g_minus=float(gm), t_programmed=pair.t_programmed)


def drift_factor(elapsed: float, params: DeviceParams) -> float:
    """Power-law decay factor ((elapsed)/t0)^(-nu).

    Drift is defined from ``t0`` after programming onward; earlier reads
    see the programmed value unchanged (factor 1). Negative elapsed time
    is a caller error.
    """
    if elapsed < 0:
        raise ValueError("read time precedes programming time")
    eff = max(elapsed, params.t0)
    return float((eff / params.t0) ** (-params.drift_nu))


def apply_drift(pair: ConductancePair, t_now: float, params: DeviceParams) -> ConductancePair:
    """Conductance relaxation of both devices at absolute time t_now."""
    f = drift_factor(t_now - pair.t_programmed, params)
    return ConductancePair(
        g_plus=pair.g_plus * f, g_minus=pair.g_minus * f, t_programmed=pair.t_programmed
    )


def program_tile(
    weights: np.ndarray,
    w_max: float,
    params: DeviceParams,
    rng: np.random.Generator,
    t_programmed: float = 0.0,
    col_scale: np.ndarray | None = None,
    col_offset: np.ndarray | None = None,
    size: int = 512,
) -> ProgrammedTile:
    """Program a weight block onto a fresh tile.

    ``weights`` is (rows, cols) with rows, cols <= size. Programming
    noise is applied once, here. Unspecified column corrections default
    to identity.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weights must be 2-D")
    rows, cols = w.shape
    if rows > size or cols > size:
        raise ValueError(f"weight block {w.shape} exceeds tile size {size}")
    g_plus = np.zeros((size, size))
    g_minus = np.zeros((size, size))
    gp, gm, n_sat = map_weights_to_conductances(w, w_max, params)
    g_plus[:rows, :cols] = _noise_nonzero(gp, params.sigma_prog, params.g_max, rng)
    g_minus[:rows, :cols] = _noise_nonzero(gm, params.sigma_prog, params.g_max, rng)
    if col_scale is None:
        col_scale = np.ones(size)
    if col_offset is None:
        col_offset = np.zeros(size)
    return ProgrammedTile(
        g_plus=g_plus,
        g_minus=g_minus,
        col_scale=np.asarray(col_scale, dtype=np.float64),
        col_offset=np.asarray(col_offset, dtype=np.float64),
        rows_used=rows,
        cols_used=cols,
        t_programmed=t_programmed,
        size=size,
        saturation_count=n_sat,
    )


def analog_vmm(
    tile: ProgrammedTile,
    inputs: np.ndarray,
    params: DeviceParams,
    rng: np.random.Generator | None = None,
    t_now: float | None = None,
) -> np.ndarray:
    """One analog vector-matrix multiply through the tile.

    ``inputs`` is a vector of signed ``input_bits`` integers of length
    ``rows_used``, or a batch ``(n, rows_used)`` which models n
    back-to-back reads (read noise is drawn independently per read).
    Per column j the bitline accumulates

        sum_i inputs[i] * (g_plus - g_minus + read_noise)[i, j] / g_max

    with drift evaluated at ``t_now``, then the ADC applies the
    per-column affine correction, rounds, and clips to the signed
    ``adc_bits`` range.
    """
    x = np.asarray(inputs)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("inputs must be signed integers (PWM codes)")
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != tile.rows_used:
        raise ValueError(
            f"input length {x.shape[-1]} does not match rows_used {tile.rows_used}"
        )
    lo_in = -(1 << (params.input_bits - 1))
    if x.min() < lo_in or x.max() > params.input_hi:
        raise ValueError("inputs exceed the PWM bit width")

    r, c = tile.rows_used, tile.cols_used
    g_eff = tile.g_plus[:r, :c] - tile.g_minus[:r, :c]
    if t_now is not None:
        g_eff = g_eff * drift_factor(t_now - tile.t_programmed, params)
    xf = x.astype(np.float64)
    if params.sigma_read > 0:
        if rng is None:
            raise ValueError("rng required when sigma_read > 0")
        noise = rng.normal(0.0, params.sigma_read, size=(x.shape[0], r, c))
        acc = np.einsum("nr,nrc->nc", xf, (g_eff[None, :, :] + noise) / params.g_max)
    else:
        acc = xf @ (g_eff / params.g_max)
    out = np.rint(acc * tile.col_scale[:c] + tile.col_offset[:c])
    out = np.clip(out, params.adc_lo, params.adc_hi).astype(np.int64)
    return out[0] if single else out
