"""Binary crossbar array: programming, current-summing VMM, ADC and noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class CrossbarConfig:
    rows: int = 128
    cols: int = 128
    adc_bits: int = 8
    cols_per_adc: int = 8
    noise_sigma: float = 0.0
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("crossbar needs at least one row and one column")
        if self.adc_bits < 1:
            raise ParameterError("ADC precision must be >= 1 bit")
        if self.cols_per_adc < 1 or self.cols % self.cols_per_adc:
            raise ParameterError(f"cols_per_adc={self.cols_per_adc} must divide cols={self.cols}")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if not 0 <= self.flip_prob < 0.5:
            raise ParameterError("flip_prob must lie in [0, 0.5)")

    @property
    def adcs(self) -> int:
        return self.cols // self.cols_per_adc

    @property
    def adc_max(self) -> int:
        return (1 << self.adc_bits) - 1

    @property
    def lossless(self) -> bool:
        return self.adc_bits >= math.ceil(math.log2(self.rows + 1))

    @property
    def noisy(self) -> bool:
        return self.noise_sigma > 0 or self.flip_prob > 0

    def without_noise(self) -> "CrossbarConfig":
        return CrossbarConfig(self.rows, self.cols, self.adc_bits, self.cols_per_adc)


@dataclass(frozen=True)
class ColumnReadout:
    raw: np.ndarray
    quantized: np.ndarray
    adc_conversions: int


@dataclass(frozen=True, eq=False)
class CrossbarArray:
    config: CrossbarConfig
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.shape != (self.config.rows, self.config.cols):
            raise DimensionError(f"cell grid {c.shape} does not match {self.config.rows}x{self.config.cols}")
        if c.size and (c.min() < 0 or c.max() > 1):
            raise DimensionError("cells must be binary")
        c = c.astype(np.uint8)
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)

    @classmethod
    def blank(cls, config: CrossbarConfig) -> "CrossbarArray":
        return cls(config, np.zeros((config.rows, config.cols), np.uint8))

    @property
    def weights(self) -> np.ndarray:
        # float32 matmul is exact for 0/1 sums up to 2^24 rows
        w = getattr(self, "_w", None)
        if w is None:
            w = self.cells.astype(np.float32)
            object.__setattr__(self, "_w", w)
        return w


def program(array: CrossbarArray, bits) -> CrossbarArray:
    bits = np.asarray(bits)
    if bits.shape != array.cells.shape:
        raise DimensionError(f"bit matrix {bits.shape} does not match array {array.cells.shape}")
    return CrossbarArray(array.config, bits)


def _check_inputs(array: CrossbarArray, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != array.config.rows:
        raise DimensionError(f"input length {v.shape[-1]} != rows {array.config.rows}")
    return v


def quantize(counts: np.ndarray, cfg: CrossbarConfig) -> np.ndarray:
    """Linear ADC, one code per cell current, saturating at 2^p - 1."""
    return np.clip(counts, 0, cfg.adc_max)


def column_counts(array: CrossbarArray, V: np.ndarray) -> np.ndarray:
    """Exact I_i = sum_j G_ji v_j for every row of V, shape (..., C)."""
    return (V.astype(np.float32) @ array.weights).astype(np.int64)


def noisy_counts(array: CrossbarArray, V: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Cell flips, then column Gaussian, then clamp to [0, R] and round."""
    cfg = array.config
    V = V.astype(np.float32)
    lead = V.shape[:-1]
    if cfg.flip_prob > 0:
        flips = rng.random(lead + array.cells.shape) < cfg.flip_prob
        # (G xor F) = G + F - 2GF
        delta = flips.astype(np.float32) * (1.0 - 2.0 * array.weights)
        counts = V @ array.weights + np.einsum("...r,...rc->...c", V, delta)
    else:
        counts = V @ array.weights
    counts = counts.astype(np.float64)
    if cfg.noise_sigma > 0:
        counts = counts + rng.normal(0.0, cfg.noise_sigma, size=counts.shape)
    return np.rint(np.clip(counts, 0, cfg.rows)).astype(np.int64)


def vmm_exact(array: CrossbarArray, v) -> ColumnReadout:
    v = _check_inputs(array, v)
    if v.ndim != 1:
        raise DimensionError("vmm_exact takes a single input vector")
    raw = column_counts(array, v)
    return ColumnReadout(raw, quantize(raw, array.config), array.config.cols)


def vmm_noisy(array: CrossbarArray, v, rng_seed) -> ColumnReadout:
    v = _check_inputs(array, v)
    if v.ndim != 1:
        raise DimensionError("vmm_noisy takes a single input vector")
    if not array.config.noisy:
        return vmm_exact(array, v)
    raw = noisy_counts(array, v, np.random.default_rng(rng_seed))
    return ColumnReadout(raw, quantize(raw, array.config), array.config.cols)
