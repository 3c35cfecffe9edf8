"""Weight layout on crossbars.

The resident polynomial A becomes an n x (2n-1) convolution matrix (row r is A
shifted right by r). Its k-bit entries are either sliced into k bit-planes, one
per PE (bit mapping), or interleaved k columns per weight inside each array
(conventional mapping). Planes are cut into R x C tiles and identical tiles
share one physical array.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .crossbar import CrossbarConfig
from .errors import PlanError
from .poly import Polynomial, RingParams, WideVector


class MappingMode(str, enum.Enum):
    BIT_MAPPING = "bit"
    CONVENTIONAL = "conventional"

    @classmethod
    def parse(cls, text) -> "MappingMode":
        if isinstance(text, MappingMode):
            return text
        t = str(text).strip().lower().replace("-", "_")
        if t in ("bit", "bm", "bit_mapping"):
            return cls.BIT_MAPPING
        if t in ("conventional", "conv", "cm"):
            return cls.CONVENTIONAL
        raise PlanError(f"unknown mapping mode {text!r}")


def _bits_of(values: np.ndarray, b: int) -> np.ndarray:
    if values.dtype == object:
        return np.vectorize(lambda v: (int(v) >> b) & 1, otypes=[np.uint8])(values)
    return ((values >> b) & 1).astype(np.uint8)


# --- weight sources -----------------------------------------------------

class WeightMatrix:
    """Nonnegative integer weights addressed by (row, col); rows are the input side."""

    rows: int
    cols: int
    bits: int

    def block(self, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
        raise NotImplementedError

    def block_key(self, r0: int, c0: int, r_ext: int, c_ext: int):
        """Hashable token; equal tokens guarantee equal blocks. None disables grouping."""
        return None

    def dense(self) -> np.ndarray:
        return self.block(0, self.rows, 0, self.cols)


class DenseWeights(WeightMatrix):
    def __init__(self, values, bits: int):
        v = np.asarray(values)
        if v.ndim != 2:
            raise PlanError("weights must be a 2-D matrix")
        if v.dtype != object:
            v = v.astype(np.int64)
        if v.size and (v.min() < 0 or int(v.max()) >= (1 << bits)):
            raise PlanError(f"weights must lie in [0, 2^{bits})")
        self.values = v
        self.rows, self.cols = v.shape
        self.bits = bits

    def block(self, r0, r1, c0, c1):
        return self.values[r0:r1, c0:c1]


@dataclass(frozen=True, eq=False)
class ConvMatrix(WeightMatrix):
    """Implicit convolution matrix: entry(r, c) = A[c - r] when 0 <= c - r < n."""

    params: RingParams
    generator: Polynomial
    _gen: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.params.n
        dtype = np.int64 if self.params.k <= 62 else object
        # zero guard of width n on both sides makes every window a plain slice
        padded = np.zeros(3 * n, dtype=dtype)
        padded[n:2 * n] = self.generator.coeffs
        object.__setattr__(self, "_gen", padded)

    @property
    def rows(self):
        return self.params.n

    @property
    def cols(self):
        return 2 * self.params.n - 1

    @property
    def bits(self):
        return self.params.k

    @property
    def shape(self):
        return (self.rows, self.cols)

    def entry(self, r: int, c: int) -> int:
        d = c - r
        return self.generator.coeffs[d] if 0 <= d < self.params.n else 0

    def block(self, r0, r1, c0, c1):
        n = self.params.n
        r = np.arange(r0, r1)[:, None]
        c = np.arange(c0, c1)[None, :]
        d = np.clip(c - r, -n, 2 * n - 1) + n
        return self._gen[d]

    def block_key(self, r0, c0, r_ext, c_ext):
        return ("conv", c0 - r0, r_ext, c_ext)

    def matvec(self, b: Sequence[int]) -> WideVector:
        """b^T M over exact integers (equals the linear convolution)."""
        n = self.params.n
        out = [0] * (2 * n - 1)
        for r, br in enumerate(b):
            if br:
                for d, a in enumerate(self.generator.coeffs):
                    out[r + d] += br * a
        return WideVector(tuple(out))


def build_conv_matrix(a: Polynomial, p: RingParams | None = None) -> ConvMatrix:
    return ConvMatrix(p or a.ring, a)


class InterleavedBits(WeightMatrix):
    """Conventional layout: weight column c, bit b lands in binary column c*k + b."""

    def __init__(self, src: WeightMatrix):
        self.src = src
        self.k = src.bits
        self.rows = src.rows
        self.cols = src.cols * src.bits
        self.bits = 1

    def block(self, r0, r1, c0, c1):
        k = self.k
        if c1 <= c0:
            return np.zeros((r1 - r0, 0), np.uint8)
        w0, w1 = c0 // k, (c1 - 1) // k + 1
        vals = self.src.block(r0, r1, w0, w1)
        g = np.arange(c0, c1)
        sel = vals[:, g // k - w0]
        shifts = (g % k)[None, :]
        if sel.dtype == object:
            return np.vectorize(lambda v, s: (int(v) >> int(s)) & 1, otypes=[np.uint8])(sel, shifts)
        return ((sel >> shifts) & 1).astype(np.uint8)

    def block_key(self, r0, c0, r_ext, c_ext):
        if isinstance(self.src, ConvMatrix):
            return ("conv-il", c0 - r0 * self.k, r_ext, c_ext)
        return None


# --- bit planes and tiles -------------------------------------------------

@dataclass(frozen=True, eq=False)
class BitPlane:
    bit_index: int
    source: WeightMatrix

    @property
    def shape(self):
        return (self.source.rows, self.source.cols)

    def block(self, r0, r1, c0, c1) -> np.ndarray:
        if isinstance(self.source, InterleavedBits):
            return self.source.block(r0, r1, c0, c1)
        return _bits_of(self.source.block(r0, r1, c0, c1), self.bit_index)

    def key(self, r0, c0, r_ext, c_ext):
        k = self.source.block_key(r0, c0, r_ext, c_ext)
        return None if k is None else (self.bit_index,) + k

    @property
    def matrix(self) -> np.ndarray:
        return self.block(0, self.source.rows, 0, self.source.cols)


def bit_slice_weights(m: WeightMatrix, k: int | None = None) -> list:
    k = m.bits if k is None else k
    if k < m.bits and m.dense().max() >= (1 << k):
        raise PlanError(f"weights exceed {k} bits")
    return [BitPlane(b, m) for b in range(k)]


def bit_slice_input(b, k: int) -> list:
    """LSB-first list of k binary vectors."""
    coeffs = np.asarray(b.coeffs if isinstance(b, Polynomial) else b)
    return [_bits_of(coeffs, t) for t in range(k)]


def input_bit_planes(B: np.ndarray, k: int) -> np.ndarray:
    """(m, n) coefficients -> (m, k, n) uint8 bits, LSB first."""
    B = np.atleast_2d(B)
    if B.dtype == object:
        out = np.empty(B.shape[:1] + (k,) + B.shape[1:], np.uint8)
        for t in range(k):
            out[:, t] = _bits_of(B, t)
        return out
    shifts = np.arange(k, dtype=np.int64)[None, :, None]
    return ((B[:, None, :] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class TileGrid:
    plane: BitPlane
    rows: int
    cols: int

    @property
    def row_tiles(self) -> int:
        return math.ceil(self.plane.shape[0] / self.rows)

    @property
    def col_tiles(self) -> int:
        return math.ceil(self.plane.shape[1] / self.cols)

    def extent(self, i, j):
        pr, pc = self.plane.shape
        return min(self.rows, pr - i * self.rows), min(self.cols, pc - j * self.cols)

    def tile(self, i: int, j: int) -> np.ndarray:
        re, ce = self.extent(i, j)
        r0, c0 = i * self.rows, j * self.cols
        out = np.zeros((self.rows, self.cols), np.uint8)
        out[:re, :ce] = self.plane.block(r0, r0 + re, c0, c0 + ce)
        return out

    def key(self, i, j):
        re, ce = self.extent(i, j)
        return self.plane.key(i * self.rows, j * self.cols, re, ce)

    @property
    def tiles(self) -> list:
        return [[self.tile(i, j) for j in range(self.col_tiles)] for i in range(self.row_tiles)]

    def reassemble(self, tiles=None) -> np.ndarray:
        tiles = tiles if tiles is not None else self.tiles
        full = np.block(tiles)
        return full[: self.plane.shape[0], : self.plane.shape[1]]


def tile(plane: BitPlane, cfg: CrossbarConfig) -> TileGrid:
    return TileGrid(plane, cfg.rows, cfg.cols)


def dedup(grids: Sequence[TileGrid]):
    """Distinct tile contents across all grids.

    Returns (physical arrays, reuse_map) with reuse_map[(grid, i, j)] -> array id;
    the first occurrence of a content is canonical.
    """
    physical: list = []
    by_content: dict = {}
    by_key: dict = {}
    reuse_map: dict = {}
    for g, grid in enumerate(grids):
        for i in range(grid.row_tiles):
            for j in range(grid.col_tiles):
                key = grid.key(i, j)
                if key is not None and key in by_key:
                    reuse_map[(g, i, j)] = by_key[key]
                    continue
                t = grid.tile(i, j)
                content = t.tobytes()
                pid = by_content.get(content)
                if pid is None:
                    pid = len(physical)
                    t.setflags(write=False)
                    physical.append(t)
                    by_content[content] = pid
                reuse_map[(g, i, j)] = pid
                if key is not None:
                    by_key[key] = pid
    return physical, reuse_map


# --- plans --------------------------------------------------------------

@dataclass(frozen=True)
class LogicalTile:
    pe: int
    row_tile: int
    col_tile: int
    physical: int
    active: bool


@dataclass(frozen=True, eq=False)
class MappingPlan:
    mode: MappingMode
    config: CrossbarConfig
    source: WeightMatrix
    weight_bits: int
    pe_count: int
    row_tiles: int
    col_tiles: int
    logical_tiles: tuple
    physical_arrays: tuple = field(repr=False)
    reuse_map: dict = field(repr=False)
    shift_adder_count: int
    array_budget: int | None = None

    @property
    def ring(self) -> RingParams | None:
        src = self.source
        return src.params if isinstance(src, ConvMatrix) else None

    @property
    def physical_count(self) -> int:
        return len(self.physical_arrays)

    @property
    def logical_count(self) -> int:
        return len(self.logical_tiles)

    @property
    def active_tiles(self) -> list:
        return [t for t in self.logical_tiles if t.active]

    @property
    def active_count(self) -> int:
        return sum(1 for t in self.logical_tiles if t.active)

    @property
    def time_multiplex(self) -> int:
        if self.array_budget is None or self.array_budget >= self.physical_count:
            return 1
        return math.ceil(self.physical_count / self.array_budget)

    @property
    def hardware_arrays(self) -> int:
        if self.array_budget is None:
            return self.physical_count
        return min(self.array_budget, self.physical_count)

    def pe_tiles(self, pe: int) -> list:
        return [t for t in self.logical_tiles if t.pe == pe]

    def reuse_factors(self) -> list:
        counts = [0] * self.physical_count
        for t in self.logical_tiles:
            counts[t.physical] += 1
        return counts

    def slot_of(self, physical: int) -> int:
        """Pipeline slot of a physical array under round-robin time multiplexing."""
        return physical % self.time_multiplex

    def with_budget(self, array_budget: int | None) -> "MappingPlan":
        _check_budget(array_budget)
        return MappingPlan(
            self.mode, self.config, self.source, self.weight_bits, self.pe_count,
            self.row_tiles, self.col_tiles, self.logical_tiles, self.physical_arrays,
            self.reuse_map, self.shift_adder_count, array_budget,
        )

    def reconstruct(self) -> np.ndarray:
        """Rebuild the integer weight matrix from physical arrays via reuse_map."""
        R, C = self.config.rows, self.config.cols
        rows, cols = self.source.rows, self.source.cols
        if self.mode is MappingMode.BIT_MAPPING:
            out = np.zeros((rows, cols), dtype=object)
            for b in range(self.pe_count):
                plane = np.block([[self.physical_arrays[self.reuse_map[(b, i, j)]]
                                   for j in range(self.col_tiles)] for i in range(self.row_tiles)])
                out += plane[:rows, :cols].astype(object) << b
            return out
        k = self.weight_bits
        full = np.block([[self.physical_arrays[self.reuse_map[(0, i, j)]]
                          for j in range(self.col_tiles)] for i in range(self.row_tiles)])
        full = full[:rows, : cols * k].astype(object).reshape(rows, cols, k)
        return sum(full[:, :, b] << b for b in range(k))


def _check_budget(array_budget):
    if array_budget is not None and array_budget < 1:
        raise PlanError("array_budget must be >= 1")


def _assemble(mode, cfg, source, k, grids, shift_adders, array_budget) -> MappingPlan:
    physical, reuse_map = dedup(grids)
    nonzero = [bool(a.any()) for a in physical]
    logical = tuple(
        LogicalTile(g, i, j, reuse_map[(g, i, j)], nonzero[reuse_map[(g, i, j)]])
        for g, grid in enumerate(grids)
        for i in range(grid.row_tiles)
        for j in range(grid.col_tiles)
    )
    return MappingPlan(
        mode=mode, config=cfg, source=source, weight_bits=k, pe_count=len(grids),
        row_tiles=grids[0].row_tiles, col_tiles=grids[0].col_tiles,
        logical_tiles=logical, physical_arrays=tuple(physical), reuse_map=reuse_map,
        shift_adder_count=shift_adders(len(logical)), array_budget=array_budget,
    )


def plan_weights_bit_mapping(weights: WeightMatrix, cfg: CrossbarConfig, array_budget=None) -> MappingPlan:
    """Bit mapping of an arbitrary weight matrix: PE b holds bit-plane b."""
    _check_budget(array_budget)
    k = weights.bits
    grids = [tile(p, cfg) for p in bit_slice_weights(weights, k)]
    return _assemble(MappingMode.BIT_MAPPING, cfg, weights, k, grids, lambda _: k, array_budget)


def conventional_groups_per_array(cfg: CrossbarConfig, k: int) -> int:
    return math.ceil(cfg.cols / k)


def plan_weights_conventional(weights: WeightMatrix, cfg: CrossbarConfig, array_budget=None) -> MappingPlan:
    """k bits of each weight in adjacent columns; one shift-adder per weight group per array."""
    _check_budget(array_budget)
    k = weights.bits
    grids = [tile(BitPlane(0, InterleavedBits(weights)), cfg)]
    groups = conventional_groups_per_array(cfg, k)
    return _assemble(MappingMode.CONVENTIONAL, cfg, weights, k, grids, lambda n_arrays: n_arrays * groups,
                     array_budget)


def plan_bit_mapping(a: Polynomial, p: RingParams, cfg: CrossbarConfig, array_budget=None) -> MappingPlan:
    return plan_weights_bit_mapping(build_conv_matrix(a, p), cfg, array_budget)


def plan_conventional(a: Polynomial, p: RingParams, cfg: CrossbarConfig, array_budget=None) -> MappingPlan:
    return plan_weights_conventional(build_conv_matrix(a, p), cfg, array_budget)


def make_plan(a: Polynomial, p: RingParams, cfg: CrossbarConfig, mode, array_budget=None) -> MappingPlan:
    if MappingMode.parse(mode) is MappingMode.BIT_MAPPING:
        return plan_bit_mapping(a, p, cfg, array_budget)
    return plan_conventional(a, p, cfg, array_budget)


def plan_document(plan: MappingPlan) -> dict:
    """Structured summary used by dump-plan."""
    reuse = plan.reuse_factors()
    pes = []
    for pe in range(plan.pe_count):
        tiles = plan.pe_tiles(pe)
        pes.append({
            "pe": pe,
            "weight_bit": pe if plan.mode is MappingMode.BIT_MAPPING else "all",
            "logical_tiles": len(tiles),
            "active_tiles": sum(t.active for t in tiles),
            "physical_ids": sorted({t.physical for t in tiles}),
            "tiles": [[t.row_tile, t.col_tile, t.physical, int(t.active)] for t in tiles],
        })
    ring = plan.ring
    return {
        "mode": plan.mode.value,
        "ring": None if ring is None else {"n": ring.n, "q": ring.q, "k": ring.k, "phi": ring.phi.value},
        "crossbar": {"rows": plan.config.rows, "cols": plan.config.cols},
        "weight_bits": plan.weight_bits,
        "pe_count": plan.pe_count,
        "tile_grid": [plan.row_tiles, plan.col_tiles],
        "logical_arrays": plan.logical_count,
        "active_arrays": plan.active_count,
        "physical_arrays": plan.physical_count,
        "dedup_factor": plan.logical_count / plan.physical_count,
        "reuse_factors": reuse,
        "shift_adder_count": plan.shift_adder_count,
        "array_budget": plan.array_budget,
        "time_multiplex": plan.time_multiplex,
        "pes": pes,
    }
