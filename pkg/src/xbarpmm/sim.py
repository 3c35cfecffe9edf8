"""Cycle-level execution of PMM on the crossbar fabric.

Four steps per multiplication: slice B into bit vectors, run every PE (VMM per
input bit, adder tree across row tiles, MSB-first accumulate-shift), add the PE
outputs by weight significance at the tile, then fold the degree and reduce
the coefficients with limb-wise Barrett. PE compute, tile accumulation and
tile reduction form a three-stage pipeline.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import crossbar as xb
from .crossbar import CrossbarArray, CrossbarConfig
from .errors import ParameterError, PlanError
from .mapping import (
    ConvMatrix,
    DenseWeights,
    MappingMode,
    MappingPlan,
    conventional_groups_per_array,
    input_bit_planes,
    make_plan,
    plan_weights_bit_mapping,
)
from .poly import (
    BarrettParams,
    NttContext,
    Polynomial,
    RingParams,
    WideVector,
    barrett_precompute,
    barrett_reduce_array,
    inverse_twiddle_matrix,
    pmm_reference_batch,
    reduce_degree_array,
    twiddle_matrix,
)

STAGES = ("PE_COMPUTE", "TILE_ACCUMULATE", "TILE_REDUCE")


@dataclass(frozen=True)
class FabricConfig:
    xbar: CrossbarConfig
    ring: RingParams
    mapping_mode: MappingMode = MappingMode.BIT_MAPPING
    array_budget: int | None = None
    frequency_mhz: float = 400.0
    vmm_issue_cycles: int = 1
    adc_cycles_per_conversion: int = 1
    adder_tree_cycles_per_level: int = 1
    shifter_cycles: int = 1
    accumulate_cycles_per_level: int = 1
    reduce_cycles_per_batch: int = 4

    def __post_init__(self):
        object.__setattr__(self, "mapping_mode", MappingMode.parse(self.mapping_mode))
        if self.frequency_mhz <= 0:
            raise ParameterError("frequency must be positive")
        for name in ("vmm_issue_cycles", "adc_cycles_per_conversion", "adder_tree_cycles_per_level",
                     "shifter_cycles", "accumulate_cycles_per_level", "reduce_cycles_per_batch"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1 cycle")
        if self.array_budget is not None and self.array_budget < 1:
            raise ParameterError("array_budget must be >= 1")


@dataclass
class PipelineTrace:
    total_cycles: int
    initiation_interval: int
    fill_latency: int
    stage_busy: dict
    stage_latency: dict
    intervals: dict
    counters: dict
    pmm_count: int = 1

    def summary(self) -> dict:
        return {
            "pmm_count": self.pmm_count,
            "total_cycles": self.total_cycles,
            "initiation_interval": self.initiation_interval,
            "fill_latency": self.fill_latency,
            "stage_busy": dict(self.stage_busy),
            "counters": dict(self.counters),
        }

    def records(self) -> list:
        """One record per stage event, then one summary record."""
        out = []
        for stage in STAGES:
            for pmm, start, end in self.intervals.get(stage, ()):
                out.append({"type": "event", "stage": stage, "pmm": pmm, "start": start, "end": end})
        out.sort(key=lambda r: (r["start"], STAGES.index(r["stage"]), r["pmm"]))
        out.append({"type": "summary", **self.summary()})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


@dataclass
class FabricResult:
    result: Polynomial | None
    trace: PipelineTrace
    noisy: bool = False
    error_stats: dict | None = None
    values: np.ndarray | None = field(default=None, repr=False)


# --- fabric ---------------------------------------------------------------

@dataclass(eq=False)
class Fabric:
    plan: MappingPlan
    config: FabricConfig | None
    arrays: list
    program_count: int
    materialized: bool = False

    @property
    def ring(self) -> RingParams | None:
        return self.plan.ring

    def array_for(self, tile) -> CrossbarArray:
        if self.materialized:
            return self.arrays[self._logical_index[(tile.pe, tile.row_tile, tile.col_tile)]]
        return self.arrays[tile.physical]

    def __post_init__(self):
        self._logical_index = {(t.pe, t.row_tile, t.col_tile): i for i, t in enumerate(self.plan.logical_tiles)}


def load_operand(plan: MappingPlan, config: FabricConfig | None = None, materialize: bool = False) -> Fabric:
    """Program every physical array once (or every logical tile when materialize=True)."""
    xcfg = plan.config
    if config is not None:
        if config.xbar.rows != xcfg.rows or config.xbar.cols != xcfg.cols:
            raise PlanError("plan and fabric disagree on crossbar geometry")
        if plan.ring is not None and plan.ring != config.ring:
            raise PlanError("plan and fabric disagree on the ring")
        xcfg = config.xbar
    blank = CrossbarArray.blank(xcfg)
    if materialize:
        arrays = [xb.program(blank, plan.physical_arrays[t.physical]) for t in plan.logical_tiles]
    else:
        arrays = [xb.program(blank, bits) for bits in plan.physical_arrays]
    return Fabric(plan, config, arrays, len(arrays), materialize)


def make_fabric(a: Polynomial, config: FabricConfig, materialize: bool = False) -> Fabric:
    plan = make_plan(a, config.ring, config.xbar.without_noise(), config.mapping_mode, config.array_budget)
    return load_operand(plan, config, materialize)


# --- timing -------------------------------------------------------------

def _levels(count: int) -> int:
    return math.ceil(math.log2(count)) if count > 1 else 0


def stage_timing(plan: MappingPlan, fc: FabricConfig | None, input_bits: int, n_out: int | None = None):
    """(busy, latency) cycles per stage for one PMM."""
    fc = fc or _generic_fabric_config(plan)
    xcfg = plan.config
    per_vmm = max(fc.vmm_issue_cycles, xcfg.cols_per_adc * fc.adc_cycles_per_conversion)
    pe_busy = input_bits * plan.time_multiplex * per_vmm
    arrays_per_pe = plan.row_tiles * plan.col_tiles
    pe_lat = pe_busy + max(1, _levels(arrays_per_pe)) * fc.adder_tree_cycles_per_level + fc.shifter_cycles
    acc = max(1, _levels(plan.pe_count) * fc.accumulate_cycles_per_level)
    n = n_out if n_out is not None else (plan.ring.n if plan.ring else plan.source.cols)
    red = fc.reduce_cycles_per_batch * math.ceil(n / xcfg.cols)
    busy = {"PE_COMPUTE": pe_busy, "TILE_ACCUMULATE": acc, "TILE_REDUCE": red}
    latency = {"PE_COMPUTE": pe_lat, "TILE_ACCUMULATE": acc, "TILE_REDUCE": red}
    return busy, latency


def _generic_fabric_config(plan: MappingPlan) -> FabricConfig:
    ring = plan.ring or RingParams(4, 3)
    return FabricConfig(plan.config, ring, plan.mode, plan.array_budget)


def reduction_limbs(ring: RingParams) -> int:
    bound = 2 * ring.n * ring.q * ring.q
    return math.ceil(bound.bit_length() / (2 * ring.k))


def event_counters(plan: MappingPlan, input_bits: int, n_out: int | None = None) -> dict:
    """Per-PMM event counts implied by the plan (asserted against execution in tests)."""
    C = plan.config.cols
    active = plan.active_count
    tree = 0
    for pe in range(plan.pe_count):
        per_col: dict = {}
        for t in plan.pe_tiles(pe):
            if t.active:
                per_col[t.col_tile] = per_col.get(t.col_tile, 0) + 1
        tree += sum(max(0, v - 1) for v in per_col.values())
    if plan.mode is MappingMode.BIT_MAPPING:
        shift_ops = plan.pe_count * input_bits
    else:
        shift_ops = active * conventional_groups_per_array(plan.config, plan.weight_bits) * input_bits
    ring = plan.ring
    if ring is not None:
        reductions = ring.n * 2 * reduction_limbs(ring)
    else:
        reductions = n_out if n_out is not None else plan.source.cols
    return {
        "array_activations": active * input_bits,
        "adc_conversions": active * C * input_bits,
        "adder_tree_ops": tree * input_bits,
        "shift_add_ops": shift_ops,
        "accumulate_ops": plan.pe_count,
        "reduction_ops": reductions,
    }


def schedule_pipeline(fabric_or_plan, m: int, config: FabricConfig | None = None,
                      input_bits: int | None = None, counters: dict | None = None) -> PipelineTrace:
    """Aggregate trace for m back-to-back PMMs on one resident operand."""
    if m < 1:
        raise ParameterError("batch size must be >= 1")
    plan = fabric_or_plan.plan if isinstance(fabric_or_plan, Fabric) else fabric_or_plan
    if config is None and isinstance(fabric_or_plan, Fabric):
        config = fabric_or_plan.config
    bits = input_bits if input_bits is not None else (plan.ring.k if plan.ring else plan.weight_bits)
    busy, latency = stage_timing(plan, config, bits)
    ii = max(busy.values())
    intervals = {s: [] for s in STAGES}
    free = {s: 0 for s in STAGES}
    end = 0
    for i in range(m):
        ready = i * ii
        for s in STAGES:
            start = max(ready, free[s])
            intervals[s].append((i, start, start + busy[s]))
            free[s] = start + busy[s]
            ready = start + latency[s]
        end = ready
    per = counters if counters is not None else event_counters(plan, bits)
    return PipelineTrace(
        total_cycles=end,
        initiation_interval=ii,
        fill_latency=sum(latency.values()),
        stage_busy=busy,
        stage_latency=latency,
        intervals=intervals,
        counters={k: v * m for k, v in per.items()},
        pmm_count=m,
    )


# --- datapath -------------------------------------------------------------

def _tile_readout(fabric: Fabric, t, X: np.ndarray, rng) -> np.ndarray:
    """VMM of one logical tile for every (pmm, input bit) row of X -> ADC codes."""
    arr = fabric.array_for(t)
    R = arr.config.rows
    r0 = t.row_tile * R
    V = X[..., r0:r0 + R]
    if V.shape[-1] < R:
        pad = np.zeros(V.shape[:-1] + (R - V.shape[-1],), V.dtype)
        V = np.concatenate([V, pad], axis=-1)
    if rng is not None:
        raw = xb.noisy_counts(arr, V, rng)
    else:
        raw = xb.column_counts(arr, V)
    return xb.quantize(raw, arr.config)


def _pe_partials(fabric: Fabric, X: np.ndarray, rng, counters: dict) -> np.ndarray:
    """Column outputs per PE and input bit: (m, pe, bits, out_cols) before input-bit shifting.

    For conventional plans the per-array shift-adders are applied here, so the
    single PE already carries full weight significance.
    """
    plan = fabric.plan
    C = plan.config.cols
    m, bits = X.shape[0], X.shape[1]
    wide = plan.col_tiles * C
    acc = np.zeros((m, plan.pe_count, bits, wide), np.int64)
    seen: dict = {}
    for t in plan.logical_tiles:
        if not t.active:
            continue
        codes = _tile_readout(fabric, t, X, rng)
        acc[:, t.pe, :, t.col_tile * C:(t.col_tile + 1) * C] += codes
        counters["array_activations"] += m * bits
        counters["adc_conversions"] += m * bits * C
        key = (t.pe, t.col_tile)
        if key in seen:
            counters["adder_tree_ops"] += m * bits
        seen[key] = True
    if plan.mode is MappingMode.CONVENTIONAL:
        k = plan.weight_bits
        cols = plan.source.cols
        groups = acc[..., : cols * k].reshape(m, 1, bits, cols, k)
        dtype = np.int64 if k + 9 < 62 else object
        sig = np.array([1 << b for b in range(k)], dtype=dtype)
        counters["shift_add_ops"] += (
            m * plan.active_count * conventional_groups_per_array(plan.config, k) * bits)
        return (groups.astype(dtype) * sig).sum(axis=-1)
    counters["shift_add_ops"] += m * plan.pe_count * bits
    return acc[..., : plan.source.cols]


def pe_compute(fabric: Fabric, input_bit_vectors, t: int, noise_rng=None) -> np.ndarray:
    """Per-PE partial vectors for input bit t (one VMM per assigned array, adder tree)."""
    X = np.asarray(input_bit_vectors)
    if X.ndim == 2:
        X = X[None]
    counters = dict.fromkeys(("array_activations", "adc_conversions", "adder_tree_ops", "shift_add_ops"), 0)
    part = _pe_partials(fabric, X[:, t:t + 1, :], noise_rng, counters)
    return part[:, :, 0, :] if part.shape[0] > 1 else part[0, :, 0, :]


def accumulate_shift(partials: np.ndarray, dtype=np.int64) -> np.ndarray:
    """Fold input-bit significance MSB-first: acc = 2*acc + partial."""
    bits = partials.shape[-2]
    acc = np.zeros(partials.shape[:-2] + partials.shape[-1:], dtype=dtype)
    for t in reversed(range(bits)):
        acc = acc * 2 + partials[..., t, :].astype(dtype)
    return acc


def tile_accumulate(pe_outputs, significance=None) -> np.ndarray:
    """sum_p 2^p * pe_output_p (or a given per-PE significance)."""
    outs = np.asarray(pe_outputs)
    P = outs.shape[-2]
    if significance is None:
        significance = [1 << p for p in range(P)]
    big = outs.dtype == object or max(significance) >= (1 << 20)
    if big:
        outs = outs.astype(object)
    acc = np.zeros(outs.shape[:-2] + outs.shape[-1:], dtype=outs.dtype)
    for p, s in enumerate(significance):
        acc = acc + outs[..., p, :] * s
    return acc


def tile_reduce(w, ring: RingParams, bp: BarrettParams | None = None) -> np.ndarray:
    """Degree fold, then limb-wise Barrett of each signed coefficient into [0, q)."""
    bp = bp or barrett_precompute(ring.q, ring.k)
    arr = np.asarray(w.vals if isinstance(w, WideVector) else w)
    dtype = ring.wide_dtype()
    arr = arr.astype(dtype)
    v = reduce_degree_array(arr, ring)
    q, m = ring.q, bp.m
    u = v + ring.n * q * q  # multiple of q above any |v|
    limbs = reduction_limbs(ring)
    mask = (1 << m) - 1
    c = (1 << m) % q
    r = np.zeros_like(u)
    for l in reversed(range(limbs)):
        limb = (u >> (m * l)) & mask
        r = barrett_reduce_array(r * c + barrett_reduce_array(limb, bp), bp)
    return r


def _new_counters() -> dict:
    return dict.fromkeys(("array_activations", "adc_conversions", "adder_tree_ops", "shift_add_ops",
                          "accumulate_ops", "reduction_ops"), 0)


def run_weights(fabric: Fabric, inputs: np.ndarray, input_bits: int, rng=None, counters=None) -> np.ndarray:
    """Integer product inputs @ W through the fabric, shape (m, cols)."""
    counters = counters if counters is not None else _new_counters()
    X = input_bit_planes(np.atleast_2d(inputs), input_bits)
    partials = _pe_partials(fabric, X, rng, counters)
    plan = fabric.plan
    wide_bits = 2 * plan.weight_bits + input_bits + math.ceil(math.log2(max(2, plan.source.rows)))
    dtype = np.int64 if wide_bits < 62 and partials.dtype != object else object
    pe_out = accumulate_shift(partials, dtype)
    counters["accumulate_ops"] += plan.pe_count * X.shape[0]
    if plan.mode is MappingMode.CONVENTIONAL:
        return pe_out[:, 0, :]
    return tile_accumulate(pe_out)


def _coerce_batch(fabric: Fabric, B) -> np.ndarray:
    ring = fabric.ring
    if isinstance(B, Polynomial):
        if B.ring != ring:
            raise ParameterError("operand ring does not match the fabric")
        B = [B.coeffs]
    arr = np.atleast_2d(np.asarray(B, dtype=np.int64 if ring.k <= 62 else object))
    if arr.shape[-1] != ring.n:
        raise ParameterError(f"operand length {arr.shape[-1]} != ring degree {ring.n}")
    return arr


def error_stats(noisy: np.ndarray, exact: np.ndarray, q: int) -> dict:
    d = (np.asarray(noisy, dtype=object) - np.asarray(exact, dtype=object)) % q
    d = np.minimum(d, q - d).astype(np.float64)
    return {
        "mean_abs_error": float(d.mean()),
        "max_abs_error": float(d.max()) if d.size else 0.0,
        "error_rate": float((d > 0).mean()),
        "abs_errors": d.ravel().astype(int).tolist(),
    }


def simulate_pmm_batch(fabric: Fabric, B, noise_seed=None, bp: BarrettParams | None = None):
    """PMM of the resident operand with each row of B. Returns (values, trace, noisy)."""
    ring = fabric.ring
    if ring is None:
        raise PlanError("fabric does not hold a convolution operand")
    arr = _coerce_batch(fabric, B)
    xcfg = fabric.config.xbar if fabric.config is not None else fabric.plan.config
    noisy = noise_seed is not None and xcfg.noisy
    rng = np.random.default_rng(noise_seed) if noisy else None
    counters = _new_counters()
    plan = fabric.plan
    # bound the (pmm, pe, bit, column) partial tensor to a few million entries
    per_pmm = plan.pe_count * ring.k * plan.col_tiles * plan.config.cols
    chunk = max(1, (1 << 22) // per_pmm)
    outs = []
    for s in range(0, arr.shape[0], chunk):
        wide = run_weights(fabric, arr[s:s + chunk], ring.k, rng, counters)
        outs.append(tile_reduce(wide, ring, bp))
    out = np.concatenate(outs, axis=0)
    counters["reduction_ops"] += ring.n * 2 * reduction_limbs(ring) * arr.shape[0]
    m = arr.shape[0]
    trace = schedule_pipeline(fabric, m, counters={k: v // m for k, v in counters.items()})
    trace.counters = counters
    return out, trace, noisy


def simulate_pmm(fabric: Fabric, b: Polynomial, noise_seed=None) -> FabricResult:
    ring = fabric.ring
    if not isinstance(b, Polynomial) or b.ring != ring:
        raise ParameterError("operand ring does not match the fabric")
    out, trace, noisy = simulate_pmm_batch(fabric, b, noise_seed)
    result = Polynomial(tuple(int(x) for x in out[0]), ring)
    stats = None
    if noisy:
        a = fabric.plan.source.generator
        exact = pmm_reference_batch(np.array([a.coeffs], dtype=out.dtype), np.array([b.coeffs], dtype=out.dtype), ring)
        stats = error_stats(out, exact, ring.q)
    return FabricResult(result, trace, noisy, stats, out[0])


# --- NTT on crossbars (noise comparison) -----------------------------------

@dataclass(eq=False)
class NttFabric:
    ctx: NttContext
    forward: Fabric
    inverse: Fabric


def build_ntt_fabric(ctx: NttContext, cfg: CrossbarConfig, array_budget=None) -> NttFabric:
    """Dense twiddle matrices on their own arrays (stored, not reprogrammed)."""
    k = ctx.params.k
    clean = cfg.without_noise()
    fwd = plan_weights_bit_mapping(DenseWeights(np.array(twiddle_matrix(ctx), dtype=object), k), clean, array_budget)
    inv = plan_weights_bit_mapping(DenseWeights(np.array(inverse_twiddle_matrix(ctx), dtype=object), k), clean,
                                   array_budget)
    fc = FabricConfig(cfg, ctx.params, MappingMode.BIT_MAPPING, array_budget)
    return NttFabric(ctx, load_operand(fwd, fc), load_operand(inv, fc))


def simulate_pmm_ntt_on_xbar(a: Polynomial, b: Polynomial, ctx: NttContext, cfg: CrossbarConfig,
                             noise_seed=None, fabric: NttFabric | None = None) -> FabricResult:
    p = ctx.params
    if a.ring != p or b.ring != p:
        raise ParameterError("operands do not match the NTT ring")
    fabric = fabric or build_ntt_fabric(ctx, cfg)
    q, k = p.q, p.k
    noisy = noise_seed is not None and cfg.noisy
    rng = np.random.default_rng(noise_seed) if noisy else None
    counters = _new_counters()
    ab = np.array([a.coeffs, b.coeffs], dtype=np.int64 if k <= 62 else object)
    spectra = run_weights(fabric.forward, ab, k, rng, counters) % q
    prod = spectra[0].astype(object) * spectra[1].astype(object) % q
    prod = np.array([prod], dtype=ab.dtype)
    out = run_weights(fabric.inverse, prod, k, rng, counters)[0] % q
    counters["reduction_ops"] += 3 * p.n * 2
    result = Polynomial(tuple(int(x) for x in out), p)
    busy_f, lat_f = stage_timing(fabric.forward.plan, fabric.forward.config, k, p.n)
    busy_i, lat_i = stage_timing(fabric.inverse.plan, fabric.inverse.config, k, p.n)
    pe_busy = 2 * busy_f["PE_COMPUTE"] + busy_i["PE_COMPUTE"]
    busy = {"PE_COMPUTE": pe_busy, "TILE_ACCUMULATE": busy_f["TILE_ACCUMULATE"],
            "TILE_REDUCE": 3 * busy_f["TILE_REDUCE"]}
    lat = dict(busy)
    lat["PE_COMPUTE"] = pe_busy + (lat_f["PE_COMPUTE"] - busy_f["PE_COMPUTE"])
    trace = PipelineTrace(
        total_cycles=sum(lat.values()), initiation_interval=max(busy.values()), fill_latency=sum(lat.values()),
        stage_busy=busy, stage_latency=lat,
        intervals={s: [(0, 0, busy[s])] for s in STAGES}, counters=counters,
    )
    stats = None
    if noisy:
        from .poly import pmm_reference

        stats = error_stats([out], [pmm_reference(a, b).coeffs], q)
    return FabricResult(result, trace, noisy, stats, out)


def simulate_generic(fabric: Fabric, inputs, input_bits: int, noise_seed=None) -> np.ndarray:
    """inputs @ W through the fabric for plans built from arbitrary weights."""
    xcfg = fabric.plan.config if fabric.config is None else fabric.config.xbar
    rng = np.random.default_rng(noise_seed) if noise_seed is not None and xcfg.noisy else None
    return run_weights(fabric, np.atleast_2d(np.asarray(inputs)), input_bits, rng)
