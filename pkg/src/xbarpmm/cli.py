"""Command-line driver: verify, run, sweep, compare-mapping, noise-study, dump-plan.

Every command resolves a RunConfig (JSON file plus flag overrides), validates
it, and echoes it into its output. Exit codes: 0 success, 1 verification
mismatch, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cost, noise
from .crossbar import CrossbarConfig
from .errors import CostConfigError, OperandRangeError, ParameterError, PlanError
from .mapping import DenseWeights, MappingMode, make_plan, plan_document, plan_weights_bit_mapping, \
    plan_weights_conventional
from .poly import (
    BarrettParams,
    Phi,
    Polynomial,
    RingParams,
    barrett_precompute,
    barrett_reduce,
    default_modulus,
    ntt_context_new,
    ntt_forward,
    ntt_inverse,
    pmm_reference,
    pmm_reference_batch,
    pmm_via_ntt,
    poly_mul_conv1d,
    random_coeffs,
)
from .sim import (
    FabricConfig,
    event_counters,
    load_operand,
    make_fabric,
    simulate_pmm,
    simulate_pmm_batch,
    simulate_pmm_ntt_on_xbar,
)

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2

FORMATS = ("table", "csv", "json")
FAULTS = ("barrett-mu",)

# names of every oracle-equivalence check cmd_verify runs
VERIFY_CHECKS = (
    "barrett_exhaustive_q17",
    "barrett_random",
    "conv1d_vs_schoolbook",
    "pmm_reference_vs_long_division",
    "pmm_reference_batch_vs_scalar",
    "ntt_roundtrip",
    "ntt_vs_reference",
    "fabric_vs_reference",
    "dedup_vs_materialized",
    "plan_reconstruct",
    "trace_counters_vs_plan",
    "noise_off_exact",
    "ntt_on_xbar_noiseless",
)

TOY_WEIGHTS = ((1, 2, 3, 0), (2, 3, 0, 1), (3, 0, 1, 2), (0, 1, 2, 3))


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    degree: int = 256
    bitwidth: int = 16
    modulus: int | None = None
    phi: str = "x^n+1"
    mode: str = "bit"
    arrays: int | None = None
    rows: int = 128
    cols: int = 128
    adc_bits: int = 8
    cols_per_adc: int = 8
    sigma: float = 0.0
    flip_prob: float = 0.0
    seed: int = 0
    costs: str | None = None
    out: str | None = None
    format: str = "table"
    trace: str | None = None
    pairs: int = 20
    degrees: list | None = None
    bitwidths: list | None = None
    budgets: list | None = None
    sigmas: list | None = None
    seeds: int = 100
    workers: int = 1
    operand: str = "random"
    toy: bool = False
    fault: str | None = None

    def validate(self) -> "RunConfig":
        try:
            self.phi = Phi.parse(self.phi).value
            self.mode = MappingMode.parse(self.mode).value
            if self.modulus is None:
                self.modulus = default_modulus(self.degree, self.bitwidth, Phi.parse(self.phi))
            ring = self.ring()
            if ring.k != self.bitwidth:
                self.bitwidth = ring.k
            self.xbar()
            if self.arrays is not None and self.arrays < 1:
                raise ParameterError("--arrays must be >= 1")
            for b in self.budgets or ():
                if b is not None and b < 1:
                    raise ParameterError("array budgets must be >= 1")
            for n in self.degrees or ():
                RingParams(n, 3)
            for k in self.bitwidths or ():
                if not 2 <= k <= 64:
                    raise ParameterError(f"bitwidth {k} outside [2, 64]")
            if self.pairs < 1 or self.seeds < 1 or self.workers < 1:
                raise ParameterError("--pairs, --seeds and --workers must be >= 1")
        except (ParameterError, PlanError) as e:
            raise UsageError(str(e)) from None
        if self.format not in FORMATS:
            raise UsageError(f"unknown format {self.format!r}")
        if self.operand not in ("random", "zero", "unit"):
            raise UsageError(f"unknown operand {self.operand!r}")
        if self.fault is not None and self.fault not in FAULTS:
            raise UsageError(f"unknown fault {self.fault!r}")
        return self

    def ring(self) -> RingParams:
        return RingParams(self.degree, self.modulus, Phi.parse(self.phi))

    def xbar(self, noisy: bool = True) -> CrossbarConfig:
        return CrossbarConfig(self.rows, self.cols, self.adc_bits, self.cols_per_adc,
                              self.sigma if noisy else 0.0, self.flip_prob if noisy else 0.0)

    def fabric_config(self, noisy: bool = True) -> FabricConfig:
        return FabricConfig(self.xbar(noisy), self.ring(), self.mode, self.arrays)

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def load_config(path, overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(_FIELDS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None and k in _FIELDS})
    try:
        cfg = RunConfig(**data)
    except TypeError as e:
        raise UsageError(str(e)) from None
    return cfg.validate()


# --- output ---------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if v is None:
        return "-"
    return str(v)


def render_table(rows: list, columns) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def render_csv(rows: list, columns, schema: str, cfg: RunConfig, notes=()) -> str:
    buf = io.StringIO()
    buf.write(schema + "\n")
    buf.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
    for note in notes:
        buf.write(f"# {note}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c) for c in columns})
    return buf.getvalue()


def read_csv(text: str) -> list:
    """Parse CSV emitted by this tool, skipping '#' header comments."""
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(body))


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (Phi, MappingMode)):
        return o.value
    raise TypeError(f"not serializable: {type(o).__name__}")


def emit(text: str, cfg: RunConfig, stdout) -> None:
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        stdout.write(text)


def _config_banner(cfg: RunConfig) -> str:
    return "config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n"


# --- verify ---------------------------------------------------------------

def _faulty(bp: BarrettParams, fault) -> BarrettParams:
    if fault == "barrett-mu":
        return BarrettParams(bp.q, bp.m, bp.mu // 2)
    return bp


class _Tally:
    def __init__(self):
        self.rows = {name: {"check": name, "cases": 0, "mismatches": 0} for name in VERIFY_CHECKS}

    def add(self, name, cases, mismatches):
        self.rows[name]["cases"] += int(cases)
        self.rows[name]["mismatches"] += int(mismatches)


def _schoolbook(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += int(x) * int(y)
    return out


def _long_division(a, b, ring: RingParams):
    """Product remainder by explicit division by x^n -/+ 1, independent of the fold."""
    prod = _schoolbook(a, b)
    sign = -1 if ring.phi is Phi.X_N_PLUS_1 else 1
    n = ring.n
    for d in range(len(prod) - 1, n - 1, -1):
        c = prod[d]
        prod[d] = 0
        prod[d - n] += sign * c
    return [v % ring.q for v in prod[:n]]


def cmd_verify(cfg: RunConfig, stdout) -> int:
    degrees = cfg.degrees or [4, 8, 16, 32]
    bitwidths = cfg.bitwidths or [4, 8, 16]
    rng = np.random.default_rng(cfg.seed)
    tally = _Tally()

    bp17 = _faulty(barrett_precompute(17, 5), cfg.fault)
    bad = sum(barrett_reduce(x, bp17) != x % 17 for x in range(bp17.limit))
    tally.add("barrett_exhaustive_q17", bp17.limit, bad)
    for k in sorted(set(bitwidths) | {5, 16, 32}):
        q = default_modulus(64, k)
        bp = _faulty(barrett_precompute(q, k), cfg.fault)
        xs = [int.from_bytes(rng.bytes(16), "little") % bp.limit for _ in range(2000)]
        tally.add("barrett_random", len(xs), sum(barrett_reduce(x, bp) != x % q for x in xs))

    for n in degrees:
        for k in bitwidths:
            for phi in Phi:
                try:
                    ring = RingParams(n, default_modulus(n, k, phi), phi)
                except ParameterError as e:
                    raise UsageError(str(e)) from None
                _verify_ring(cfg, ring, rng, tally)
        # NTT-friendly ring per degree
        for phi in Phi:
            ring = RingParams(n, noise.smallest_ntt_prime(n, phi), phi)
            _verify_ntt(cfg, ring, rng, tally)

    rows = [tally.rows[name] for name in VERIFY_CHECKS]
    total = sum(r["cases"] for r in rows)
    mism = sum(r["mismatches"] for r in rows)
    summary = {"checks": len(rows), "cases": total, "mismatches": mism}
    if cfg.format == "json":
        text = render_json({"config": cfg.echo(), "manifest": rows, "summary": summary})
    elif cfg.format == "csv":
        text = render_csv(rows, ("check", "cases", "mismatches"), "# schema: xbarpmm-verify v1", cfg,
                          [f"summary: {json.dumps(summary)}"])
    else:
        text = (_config_banner(cfg) + render_table(rows, ("check", "cases", "mismatches"))
                + f"{total} cases, {mism} mismatches\n")
    emit(text, cfg, stdout)
    return EXIT_MISMATCH if mism else EXIT_OK


def _verify_ring(cfg: RunConfig, ring: RingParams, rng, tally: _Tally) -> None:
    m = cfg.pairs
    A = random_coeffs(ring, rng, m)
    B = random_coeffs(ring, rng, m)
    ref = pmm_reference_batch(A, B, ring)

    a0, b0 = Polynomial(tuple(A[0]), ring), Polynomial(tuple(B[0]), ring)
    tally.add("conv1d_vs_schoolbook", 1, list(poly_mul_conv1d(a0, b0).vals) != _schoolbook(A[0], B[0]))
    tally.add("pmm_reference_vs_long_division", 1,
              list(pmm_reference(a0, b0).coeffs) != _long_division(A[0], B[0], ring))
    tally.add("pmm_reference_batch_vs_scalar", 1, list(ref[0]) != list(pmm_reference(a0, b0).coeffs))

    bp = _faulty(barrett_precompute(ring.q, ring.k), cfg.fault)
    for mode in MappingMode:
        fc = FabricConfig(cfg.xbar(noisy=False), ring, mode, cfg.arrays)
        fabric = make_fabric(a0, fc)
        out, trace, _ = simulate_pmm_batch(fabric, B, bp=bp)
        tally.add("fabric_vs_reference", m, np.sum(np.any(out != pmm_reference_batch(
            np.repeat(A[:1], m, axis=0), B, ring), axis=1)))
        full = load_operand(fabric.plan, fc, materialize=True)
        out_full, _, _ = simulate_pmm_batch(full, B[:2], bp=bp)
        tally.add("dedup_vs_materialized", 2, np.sum(np.any(out_full != out[:2], axis=1)))
        dense = fabric.plan.source.dense().astype(object)
        tally.add("plan_reconstruct", 1, not np.array_equal(fabric.plan.reconstruct(), dense))
        expect = {k: v * m for k, v in event_counters(fabric.plan, ring.k).items()}
        tally.add("trace_counters_vs_plan", 1, expect != trace.counters)
        noisy_cfg = FabricConfig(CrossbarConfig(cfg.rows, cfg.cols, cfg.adc_bits, cfg.cols_per_adc, 0.0, 0.0),
                                 ring, mode, cfg.arrays)
        res = simulate_pmm(make_fabric(a0, noisy_cfg), b0, noise_seed=cfg.seed)
        tally.add("noise_off_exact", 1, res.result != Polynomial(tuple(int(v) for v in ref[0]), ring))


def _verify_ntt(cfg: RunConfig, ring: RingParams, rng, tally: _Tally) -> None:
    ctx = ntt_context_new(ring)
    A = random_coeffs(ring, rng, cfg.pairs)
    B = random_coeffs(ring, rng, cfg.pairs)
    ref = pmm_reference_batch(A, B, ring)
    rt = via = 0
    for i in range(cfg.pairs):
        a, b = Polynomial(tuple(A[i]), ring), Polynomial(tuple(B[i]), ring)
        rt += ntt_inverse(ntt_forward(a, ctx), ctx) != a
        via += list(pmm_via_ntt(a, b, ctx).coeffs) != list(ref[i])
    tally.add("ntt_roundtrip", cfg.pairs, rt)
    tally.add("ntt_vs_reference", cfg.pairs, via)
    if ring.n <= 32:
        a, b = Polynomial(tuple(A[0]), ring), Polynomial(tuple(B[0]), ring)
        res = simulate_pmm_ntt_on_xbar(a, b, ctx, cfg.xbar(noisy=False))
        tally.add("ntt_on_xbar_noiseless", 1, list(res.result.coeffs) != list(ref[0]))


# --- run ------------------------------------------------------------------

def _operand(cfg: RunConfig, ring: RingParams, rng) -> Polynomial:
    if cfg.operand == "zero":
        return Polynomial.zero(ring)
    if cfg.operand == "unit":
        return Polynomial.unit(ring)
    return Polynomial.random(ring, rng)


def _digest(coeffs) -> str:
    return hashlib.sha256(",".join(str(int(c)) for c in coeffs).encode()).hexdigest()[:16]


def _costs(cfg: RunConfig):
    try:
        return cost.load_costs(cfg.costs)
    except CostConfigError as e:
        raise UsageError(str(e)) from None


def cmd_run(cfg: RunConfig, stdout) -> int:
    ring = cfg.ring()
    costs = _costs(cfg)
    rng = np.random.default_rng(cfg.seed)
    a = _operand(cfg, ring, rng)
    b = Polynomial.random(ring, rng)
    fc = dataclasses.replace(cfg.fabric_config(), frequency_mhz=costs.frequency_mhz)
    fabric = make_fabric(a, fc)
    res = simulate_pmm(fabric, b, noise_seed=cfg.seed)
    report = cost.estimate(fabric.plan, res.trace, costs)
    expected = pmm_reference(a, b)
    matches = res.result == expected
    result = {
        "pmm_count": res.trace.pmm_count,
        "initiation_interval": res.trace.initiation_interval,
        "fill_latency": res.trace.fill_latency,
        "total_cycles": res.trace.total_cycles,
        "stage_busy": res.trace.stage_busy,
        "counters": res.trace.counters,
        "noisy": res.noisy,
        "matches_reference": bool(matches),
        "result_digest": _digest(res.result.coeffs),
        "arrays": {"logical": fabric.plan.logical_count, "active": fabric.plan.active_count,
                   "physical": fabric.plan.physical_count, "hardware": fabric.plan.hardware_arrays},
        "shift_adder_count": fabric.plan.shift_adder_count,
    }
    doc = {"config": cfg.echo(), "result": result, "report": report.to_dict()}
    if res.error_stats is not None:
        doc["error_stats"] = {k: v for k, v in res.error_stats.items() if k != "abs_errors"}
    if cfg.trace:
        Path(cfg.trace).write_text(res.trace.to_jsonl())
    if cfg.format == "json":
        text = render_json(doc)
    else:
        rows = [{"metric": k, "value": v} for k, v in report.scalars().items()]
        rows += [{"metric": k, "value": result[k]} for k in
                 ("initiation_interval", "fill_latency", "matches_reference", "shift_adder_count")]
        if "error_stats" in doc:
            rows += [{"metric": f"error.{k}", "value": v} for k, v in doc["error_stats"].items()]
        if cfg.format == "csv":
            text = render_csv(rows, ("metric", "value"), "# schema: xbarpmm-run v1", cfg)
        else:
            text = _config_banner(cfg) + render_table(rows, ("metric", "value"))
    emit(text, cfg, stdout)
    if not res.noisy and not matches:
        return EXIT_MISMATCH
    return EXIT_OK


# --- sweep ----------------------------------------------------------------

SWEEP_OUT_COLUMNS = cost.SWEEP_COLUMNS + ("array_budget",)


def cmd_sweep(cfg: RunConfig, stdout) -> int:
    costs = _costs(cfg)
    degrees = cfg.degrees or [cfg.degree]
    bitwidths = cfg.bitwidths or [cfg.bitwidth]
    budgets = cfg.budgets or [cfg.arrays]
    try:
        rows = cost.sweep([(n, k) for n in degrees for k in bitwidths], budgets, costs, cfg.mode,
                          cfg.xbar(noisy=False), cfg.seed, cfg.workers)
    except (ParameterError, PlanError) as e:
        raise UsageError(str(e)) from None
    if cfg.format == "json":
        text = render_json({"config": cfg.echo(), "schema": cost.SWEEP_SCHEMA[2:], "rows": rows})
    elif cfg.format == "csv":
        text = render_csv(rows, SWEEP_OUT_COLUMNS, cost.SWEEP_SCHEMA, cfg)
    else:
        text = _config_banner(cfg) + render_table(rows, SWEEP_OUT_COLUMNS)
    emit(text, cfg, stdout)
    return EXIT_OK


# --- compare-mapping ------------------------------------------------------

def cmd_compare_mapping(cfg: RunConfig, stdout) -> int:
    costs = _costs(cfg)
    ring = cfg.ring()
    pts = {}
    for mode in MappingMode:
        pts[mode] = cost.evaluate_point(ring.n, ring.k, mode, costs, cfg.arrays, cfg.xbar(noisy=False),
                                        cfg.seed, ring.q, ring.phi)
    bm_plan, _, bm = pts[MappingMode.BIT_MAPPING]
    cv_plan, _, cv = pts[MappingMode.CONVENTIONAL]
    ratios = cost.compare(bm, cv)
    rows = [{"metric": "shift_adder_count", "bit": bm_plan.shift_adder_count,
             "conventional": cv_plan.shift_adder_count,
             "ratio": bm_plan.shift_adder_count / cv_plan.shift_adder_count}]
    for k, v in bm.scalars().items():
        rows.append({"metric": k, "bit": v, "conventional": cv.scalars()[k], "ratio": ratios[k]})
    for comp in cost.COMPONENTS:
        for kind, attr in (("area", "area_um2"), ("energy", "energy_pj")):
            name = f"{kind}.{comp}"
            rows.append({"metric": name, "bit": getattr(bm, attr)[comp],
                         "conventional": getattr(cv, attr)[comp], "ratio": ratios[name]})
    columns = ("metric", "bit", "conventional", "ratio")
    if cfg.format == "json":
        text = render_json({"config": cfg.echo(), "rows": rows, "flagged": ratios["flagged"],
                            "bit": bm.to_dict(), "conventional": cv.to_dict()})
    elif cfg.format == "csv":
        text = render_csv(rows, columns, "# schema: xbarpmm-compare v1", cfg,
                          [f"flagged: {','.join(ratios['flagged'])}"])
    else:
        text = _config_banner(cfg) + render_table(rows, columns)
        if ratios["flagged"]:
            text += "zero denominators: " + ", ".join(ratios["flagged"]) + "\n"
    emit(text, cfg, stdout)
    return EXIT_OK


# --- noise-study ----------------------------------------------------------

TEST_COLUMNS = ("sigma", "n", "q", "seeds", "mean_conv", "mean_ntt", "mean_diff", "lower_bound", "holds")


def cmd_noise_study(cfg: RunConfig, stdout) -> int:
    sigmas = cfg.sigmas or [0.25, 0.5, 1.0]
    degrees = cfg.degrees or [8, 16, 32]
    try:
        pairs, tests = noise.noise_study(sigmas, degrees, cfg.seeds, cfg.xbar(noisy=False), cfg.seed,
                                         Phi.parse(cfg.phi))
    except (ParameterError, PlanError) as e:
        raise UsageError(str(e)) from None
    test_rows = [dataclasses.asdict(t) for t in tests]
    held = sum(t.holds for t in tests)
    summary = {"configurations": len(tests), "holding": held, "fraction": held / len(tests)}
    if cfg.format == "json":
        text = render_json({"config": cfg.echo(), "pairs": pairs, "tests": test_rows, "summary": summary})
    elif cfg.format == "csv":
        notes = [f"test: {json.dumps(r, sort_keys=True)}" for r in test_rows]
        notes.append(f"summary: {json.dumps(summary, sort_keys=True)}")
        text = render_csv(pairs, noise.PAIR_COLUMNS, noise.PAIR_SCHEMA, cfg, notes)
    else:
        text = (_config_banner(cfg) + render_table(test_rows, TEST_COLUMNS)
                + f"ordering holds in {held}/{len(tests)} configurations\n")
    emit(text, cfg, stdout)
    return EXIT_OK


# --- dump-plan ------------------------------------------------------------

def _plan_text(doc: dict) -> str:
    lines = []
    for key in ("mode", "ring", "crossbar", "weight_bits", "pe_count", "tile_grid", "logical_arrays",
                "active_arrays", "physical_arrays", "dedup_factor", "shift_adder_count", "array_budget",
                "time_multiplex"):
        lines.append(f"{key}: {json.dumps(doc[key])}")
    lines.append(f"reuse_factors: {json.dumps(doc['reuse_factors'])}")
    for pe in doc["pes"]:
        lines.append(f"pe {pe['pe']}: weight_bit={pe['weight_bit']} logical={pe['logical_tiles']} "
                     f"active={pe['active_tiles']} physical={json.dumps(pe['physical_ids'])}")
        for r, c, p, act in pe["tiles"]:
            lines.append(f"  tile ({r},{c}) -> array {p}{'' if act else ' (zero)'}")
    return "\n".join(lines) + "\n"


def toy_plans():
    """4x4 2-bit weights on 2x2 arrays, both mapping modes."""
    xcfg = CrossbarConfig(rows=2, cols=2, adc_bits=2, cols_per_adc=1)
    w = DenseWeights(np.array(TOY_WEIGHTS), 2)
    return [plan_weights_conventional(w, xcfg), plan_weights_bit_mapping(w, xcfg)]


def cmd_dump_plan(cfg: RunConfig, stdout) -> int:
    if cfg.toy:
        plans = toy_plans()
    else:
        ring = cfg.ring()
        a = _operand(cfg, ring, np.random.default_rng(cfg.seed))
        plans = [make_plan(a, ring, cfg.xbar(noisy=False), cfg.mode, cfg.arrays)]
    docs = [plan_document(p) for p in plans]
    if cfg.format == "json":
        text = render_json({"config": cfg.echo(), "plans": docs})
    elif cfg.format == "csv":
        rows = [{k: d[k] for k in ("mode", "pe_count", "logical_arrays", "active_arrays", "physical_arrays",
                                   "shift_adder_count", "time_multiplex")} for d in docs]
        text = render_csv(rows, tuple(rows[0]), "# schema: xbarpmm-plan v1", cfg)
    else:
        text = _config_banner(cfg) + "\n".join(_plan_text(d) for d in docs)
    emit(text, cfg, stdout)
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare-mapping": cmd_compare_mapping,
    "noise-study": cmd_noise_study,
    "dump-plan": cmd_dump_plan,
}


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _budget_list(text):
    return [None if v in ("none", "inf") else int(v) for v in text.split(",") if v]


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="JSON file of RunConfig fields; flags override it")
    g.add_argument("--degree", type=int)
    g.add_argument("--bitwidth", type=int)
    g.add_argument("--modulus", type=int)
    g.add_argument("--phi", help="x^n+1 (default) or x^n-1")
    g.add_argument("--mode", help="bit (default) or conventional")
    g.add_argument("--arrays", type=int, help="physical array budget")
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--adc-bits", dest="adc_bits", type=int)
    g.add_argument("--cols-per-adc", dest="cols_per_adc", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--flip-prob", dest="flip_prob", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--costs", help="component cost table")
    g.add_argument("--out", help="write output here instead of stdout")
    g.add_argument("--format", choices=FORMATS)

    p = argparse.ArgumentParser(prog="xbarpmm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="oracle-equivalence suites")
    v.add_argument("--degrees", type=_int_list)
    v.add_argument("--bitwidths", type=_int_list)
    v.add_argument("--pairs", type=int)
    v.add_argument("--fault", choices=FAULTS, help="inject a fault (test hook)")

    r = sub.add_parser("run", parents=[common], help="one PMM end to end with a cost report")
    r.add_argument("--trace", help="write the pipeline trace as JSON lines")
    r.add_argument("--operand", choices=("random", "zero", "unit"))

    s = sub.add_parser("sweep", parents=[common], help="cost sweep over degrees, bitwidths and budgets")
    s.add_argument("--degrees", type=_int_list)
    s.add_argument("--bitwidths", type=_int_list)
    s.add_argument("--budgets", type=_budget_list, help="comma list; 'none' means unlimited")
    s.add_argument("--workers", type=int)

    sub.add_parser("compare-mapping", parents=[common], help="bit mapping vs conventional ratios")

    ns = sub.add_parser("noise-study", parents=[common], help="paired Conv1D vs NTT noise errors")
    ns.add_argument("--sigmas", type=_float_list)
    ns.add_argument("--degrees", type=_int_list)
    ns.add_argument("--seeds", type=int, help="paired seeds per configuration")

    d = sub.add_parser("dump-plan", parents=[common], help="print the mapping plan")
    d.add_argument("--operand", choices=("random", "zero", "unit"))
    d.add_argument("--toy", action="store_true", default=None, help="4x4 2-bit toy on 2x2 arrays")
    return p


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, stdout)
    except UsageError as e:
        stderr.write(f"xbarpmm {args.command}: error: {e}\n")
        return EXIT_USAGE
    except (ParameterError, PlanError, CostConfigError, OperandRangeError) as e:
        stderr.write(f"xbarpmm {args.command}: error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
