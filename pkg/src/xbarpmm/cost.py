"""Area / latency / energy / throughput estimates from a plan and a trace."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .crossbar import CrossbarConfig
from .errors import CostConfigError
from .mapping import MappingMode, MappingPlan, make_plan
from .poly import Phi, Polynomial, RingParams, default_modulus
from .sim import FabricConfig, PipelineTrace, schedule_pipeline

COMPONENTS = ("xbar", "adc", "shift_adder", "adder_tree", "accumulator", "reduction", "input_driver")

REQUIRED_KEYS = (
    "frequency_mhz",
    "xbar.area_um2", "xbar.energy_pj_per_activation",
    "adc.area_um2", "adc.energy_pj_per_conversion",
    "shift_adder.area_um2", "shift_adder.energy_pj_per_op",
    "adder_tree.area_um2", "adder_tree.energy_pj_per_op",
    "accumulator.area_um2", "accumulator.energy_pj_per_op",
    "reduction.area_um2", "reduction.energy_pj_per_op",
    "input_driver.area_um2", "input_driver.energy_pj_per_activation",
)

_LINE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*=\s*([^#\s]+)\s*(?:#\s*(.*))?$")


@dataclass(frozen=True)
class ComponentCosts:
    values: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in REQUIRED_KEYS if k not in self.values]
        if missing:
            raise CostConfigError(f"missing cost entries: {', '.join(missing)}")
        bad = [k for k, v in self.values.items() if not v >= 0]
        if bad:
            raise CostConfigError(f"cost entries must be >= 0: {', '.join(bad)}")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def frequency_mhz(self) -> float:
        return self.values["frequency_mhz"]

    def scaled(self, factor: float, suffix: str = "energy") -> "ComponentCosts":
        vals = {k: (v * factor if suffix in k else v) for k, v in self.values.items()}
        return ComponentCosts(vals, dict(self.provenance))

    def zeroed(self) -> "ComponentCosts":
        vals = {k: (0.0 if k != "frequency_mhz" else v) for k, v in self.values.items()}
        return ComponentCosts(vals, dict(self.provenance))


def parse_costs(text: str, source: str = "<text>") -> ComponentCosts:
    """Flat `key = value  # provenance` lines; blank and comment-only lines ignored."""
    values, prov = {}, {}
    for num, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _LINE.match(line)
        if not m:
            raise CostConfigError(f"{source}:{num}: cannot parse {line.strip()!r}")
        key, raw, note = m.groups()
        if not note or not note.strip():
            raise CostConfigError(f"{source}:{num}: key {key!r} lacks a provenance comment")
        if key in values:
            raise CostConfigError(f"{source}:{num}: duplicate key {key!r}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise CostConfigError(f"{source}:{num}: value for {key!r} is not a number") from None
        prov[key] = note.strip()
    return ComponentCosts(values, prov)


def load_costs(path=None) -> ComponentCosts:
    if path is None:
        text = resources.files("xbarpmm").joinpath("data/default_costs.cfg").read_text()
        return parse_costs(text, "default_costs.cfg")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise CostConfigError(f"cannot read cost file {p}: {e}") from None
    return parse_costs(text, str(p))


def dump_costs(costs: ComponentCosts) -> str:
    return "".join(f"{k} = {v!r}  # {costs.provenance.get(k, 'user supplied')}\n"
                   for k, v in costs.values.items())


@dataclass
class CostReport:
    area_mm2: float
    latency_us: float
    energy_nj: float
    throughput_kops: float
    throughput_per_area: float
    initiation_interval: int
    frequency_mhz: float
    area_um2: dict
    energy_pj: dict
    area_breakdown: dict
    energy_breakdown: dict
    arrays: int = 0

    def scalars(self) -> dict:
        return {
            "area_mm2": self.area_mm2,
            "latency_us": self.latency_us,
            "energy_nj": self.energy_nj,
            "throughput_kops": self.throughput_kops,
            "throughput_per_area": self.throughput_per_area,
        }

    def to_dict(self) -> dict:
        return {
            **self.scalars(),
            "initiation_interval": self.initiation_interval,
            "frequency_mhz": self.frequency_mhz,
            "arrays": self.arrays,
            "area_um2": dict(self.area_um2),
            "energy_pj": dict(self.energy_pj),
            "area_breakdown": dict(self.area_breakdown),
            "energy_breakdown": dict(self.energy_breakdown),
        }


def _fractions(parts: dict) -> dict:
    total = sum(parts.values())
    if total <= 0:
        return {k: 0.0 for k in parts}
    return {k: v / total for k, v in parts.items()}


def adder_tree_nodes(plan: MappingPlan) -> int:
    nodes = 0
    for pe in range(plan.pe_count):
        nodes += max(0, sum(t.active for t in plan.pe_tiles(pe)) - 1)
    return nodes


def estimate(plan: MappingPlan, trace: PipelineTrace, costs: ComponentCosts) -> CostReport:
    """Area from hardware units (deduplicated arrays), energy from per-PMM event counts."""
    arrays = plan.hardware_arrays
    adcs = arrays * plan.config.adcs
    area = {
        "xbar": arrays * costs["xbar.area_um2"],
        "adc": adcs * costs["adc.area_um2"],
        "shift_adder": plan.shift_adder_count * costs["shift_adder.area_um2"],
        "adder_tree": adder_tree_nodes(plan) * costs["adder_tree.area_um2"],
        "accumulator": costs["accumulator.area_um2"],
        "reduction": costs["reduction.area_um2"],
        "input_driver": arrays * costs["input_driver.area_um2"],
    }
    m = max(1, trace.pmm_count)
    c = {k: v / m for k, v in trace.counters.items()}
    energy = {
        "xbar": c["array_activations"] * costs["xbar.energy_pj_per_activation"],
        "adc": c["adc_conversions"] * costs["adc.energy_pj_per_conversion"],
        "shift_adder": c["shift_add_ops"] * costs["shift_adder.energy_pj_per_op"],
        "adder_tree": c["adder_tree_ops"] * costs["adder_tree.energy_pj_per_op"],
        "accumulator": c["accumulate_ops"] * costs["accumulator.energy_pj_per_op"],
        "reduction": c["reduction_ops"] * costs["reduction.energy_pj_per_op"],
        "input_driver": c["array_activations"] * costs["input_driver.energy_pj_per_activation"],
    }
    f = costs.frequency_mhz
    ii = trace.initiation_interval
    area_mm2 = sum(area.values()) / 1e6
    kops = 1e3 * f / ii
    return CostReport(
        area_mm2=area_mm2,
        latency_us=trace.fill_latency / f,
        energy_nj=sum(energy.values()) / 1e3,
        throughput_kops=kops,
        throughput_per_area=kops / area_mm2 if area_mm2 > 0 else math.inf,
        initiation_interval=ii,
        frequency_mhz=f,
        area_um2=area,
        energy_pj=energy,
        area_breakdown=_fractions(area),
        energy_breakdown=_fractions(energy),
        arrays=arrays,
    )


def compare(report_a: CostReport, report_b: CostReport) -> dict:
    """Element-wise a/b ratios; a zero denominator yields None and a flag."""
    rows, flags = {}, []

    def ratio(name, x, y):
        if y == 0:
            rows[name] = None
            flags.append(name)
        else:
            rows[name] = x / y

    for k, v in report_a.scalars().items():
        ratio(k, v, report_b.scalars()[k])
    for comp in COMPONENTS:
        ratio(f"area.{comp}", report_a.area_um2[comp], report_b.area_um2[comp])
        ratio(f"energy.{comp}", report_a.energy_pj[comp], report_b.energy_pj[comp])
    rows["flagged"] = flags
    return rows


# --- sweeps ---------------------------------------------------------------

SWEEP_COLUMNS = ("n", "k", "mode", "arrays", "cycles", "area_mm2", "latency_us", "energy_nj",
                 "throughput_kops", "tpa_kops_mm2")
SWEEP_SCHEMA = "# schema: xbarpmm-sweep v1"


def resident_operand(ring: RingParams, seed: int = 0) -> Polynomial:
    return Polynomial.random(ring, np.random.default_rng(seed))


def evaluate_point(n: int, k: int, mode, costs: ComponentCosts, array_budget=None,
                   xbar: CrossbarConfig | None = None, seed: int = 0, q: int | None = None,
                   phi: Phi = Phi.X_N_PLUS_1, fabric_overrides: dict | None = None):
    """Plan + analytic trace + report for one grid point (no value simulation)."""
    xbar = xbar or CrossbarConfig()
    ring = RingParams(n, q or default_modulus(n, k, phi), phi)
    plan = make_plan(resident_operand(ring, seed), ring, xbar.without_noise(), mode, array_budget)
    fc = FabricConfig(xbar, ring, mode, array_budget, costs.frequency_mhz, **(fabric_overrides or {}))
    trace = schedule_pipeline(plan, 1, fc)
    return plan, trace, estimate(plan, trace, costs)


def sweep_row(n, k, mode, plan, trace, report) -> dict:
    return {
        "n": n, "k": k, "mode": MappingMode.parse(mode).value, "arrays": plan.hardware_arrays,
        "cycles": trace.initiation_interval, "area_mm2": report.area_mm2, "latency_us": report.latency_us,
        "energy_nj": report.energy_nj, "throughput_kops": report.throughput_kops,
        "tpa_kops_mm2": report.throughput_per_area,
    }


def _sweep_one(args):
    n, k, budget, mode, costs, xbar, seed = args
    plan, trace, report = evaluate_point(n, k, mode, costs, budget, xbar, seed)
    row = sweep_row(n, k, mode, plan, trace, report)
    row["array_budget"] = budget
    return row


def sweep(ring_grid, array_budgets, costs: ComponentCosts, mode=MappingMode.BIT_MAPPING,
          xbar: CrossbarConfig | None = None, seed: int = 0, workers: int = 1) -> list:
    """One row per (n, k) x budget, in grid order regardless of worker count."""
    jobs = [(n, k, b, mode, costs, xbar, seed) for (n, k) in ring_grid for b in array_budgets]
    if not jobs:
        raise ValueError("empty sweep grid")
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]
