import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from xbarpmm.crossbar import CrossbarConfig
from xbarpmm.errors import ParameterError, PlanError
from xbarpmm.mapping import (
    DenseWeights,
    MappingMode,
    bit_slice_weights,
    input_bit_planes,
    make_plan,
    plan_weights_bit_mapping,
    plan_weights_conventional,
)
from xbarpmm.poly import (
    Phi,
    Polynomial,
    RingParams,
    barrett_precompute,
    default_modulus,
    ntt_context_new,
    pmm_reference,
    pmm_reference_batch,
    poly_mul_conv1d,
    random_coeffs,
)
from xbarpmm.sim import (
    STAGES,
    FabricConfig,
    _pe_partials,
    accumulate_shift,
    error_stats,
    event_counters,
    load_operand,
    make_fabric,
    pe_compute,
    schedule_pipeline,
    simulate_generic,
    simulate_pmm,
    simulate_pmm_batch,
    simulate_pmm_ntt_on_xbar,
    tile_accumulate,
    tile_reduce,
)

XB = CrossbarConfig()


def ring_of(n, k, phi=Phi.X_N_PLUS_1):
    return RingParams(n, default_modulus(n, k, phi), phi)


def fabric_for(ring, mode="bit", seed=0, budget=None, xbar=XB):
    a = Polynomial.random(ring, np.random.default_rng(seed))
    return a, make_fabric(a, FabricConfig(xbar, ring, mode, budget))


class TestLoad:
    def test_zero_operand(self):
        ring = ring_of(64, 8)
        fab = make_fabric(Polynomial.zero(ring), FabricConfig(XB, ring))
        assert fab.program_count == 1
        assert not any(arr.cells.any() for arr in fab.arrays)

    def test_program_once_per_physical(self):
        _, fab = fabric_for(ring_of(256, 16))
        assert fab.program_count == fab.plan.physical_count == 49
        full = load_operand(fab.plan, fab.config, materialize=True)
        assert full.program_count == fab.plan.logical_count

    def test_toy_programs_four_per_pe(self):
        plan = plan_weights_bit_mapping(DenseWeights(np.arange(16).reshape(4, 4) % 4, 2),
                                        CrossbarConfig(2, 2, cols_per_adc=1))
        fab = load_operand(plan, materialize=True)
        assert fab.program_count == 8
        assert all(len(plan.pe_tiles(p)) == 4 for p in range(2))

    def test_mismatch(self):
        ring = ring_of(16, 8)
        plan = make_plan(Polynomial.zero(ring), ring, CrossbarConfig(64, 64), "bit")
        with pytest.raises(PlanError):
            load_operand(plan, FabricConfig(XB, ring))
        with pytest.raises(PlanError):
            load_operand(plan, FabricConfig(CrossbarConfig(64, 64), ring_of(16, 16)))

    def test_fabric_config_validation(self):
        with pytest.raises(ParameterError):
            FabricConfig(XB, ring_of(16, 8), frequency_mhz=0)
        with pytest.raises(ParameterError):
            FabricConfig(XB, ring_of(16, 8), shifter_cycles=0)


class TestPeCompute:
    def test_basis_probe(self):
        ring = ring_of(16, 8)
        a, fab = fabric_for(ring, xbar=CrossbarConfig(8, 8, cols_per_adc=2))
        planes = bit_slice_weights(fab.plan.source)
        for j in (0, 5, 15):
            x = np.zeros((1, ring.n), np.uint8)
            x[0, j] = 1
            out = pe_compute(fab, x, 0)
            for p, plane in enumerate(planes):
                assert np.array_equal(out[p], plane.matrix[j])

    def test_accumulated_pe_is_plane_times_b(self):
        ring = ring_of(32, 8)
        a, fab = fabric_for(ring, xbar=CrossbarConfig(16, 16, cols_per_adc=4))
        b = Polynomial.random(ring, np.random.default_rng(9))
        counters = dict.fromkeys(("array_activations", "adc_conversions", "adder_tree_ops", "shift_add_ops"), 0)
        parts = _pe_partials(fab, input_bit_planes(np.array([b.coeffs]), ring.k), None, counters)
        acc = accumulate_shift(parts)[0]
        for p, plane in enumerate(bit_slice_weights(fab.plan.source)):
            assert np.array_equal(acc[p], np.array(b.coeffs) @ plane.matrix.astype(np.int64))

    def test_time_multiplex_doubles_pe_busy(self):
        ring = ring_of(256, 16)
        a, fab = fabric_for(ring)
        _, fab2 = fabric_for(ring, budget=25)
        assert fab2.plan.time_multiplex == 2
        B = random_coeffs(ring, np.random.default_rng(1), 4)
        v1, t1, _ = simulate_pmm_batch(fab, B)
        v2, t2, _ = simulate_pmm_batch(fab2, B)
        assert np.array_equal(v1, v2)
        assert t2.stage_busy["PE_COMPUTE"] == 2 * t1.stage_busy["PE_COMPUTE"]


class TestTileStages:
    def test_accumulate_pass_through_and_zero(self):
        x = np.array([[3, 4, 5]])
        assert tile_accumulate(x).tolist() == [3, 4, 5]
        assert not tile_accumulate(np.zeros((4, 6), np.int64)).any()

    def test_accumulate_matches_conv(self):
        ring = ring_of(64, 16)
        a, fab = fabric_for(ring)
        b = Polynomial.random(ring, np.random.default_rng(2))
        counters = dict.fromkeys(("array_activations", "adc_conversions", "adder_tree_ops", "shift_add_ops"), 0)
        parts = _pe_partials(fab, input_bit_planes(np.array([b.coeffs]), ring.k), None, counters)
        w = tile_accumulate(accumulate_shift(parts))[0]
        assert w.tolist() == list(poly_mul_conv1d(a, b).vals)

    def test_reduce_zero_and_worked_case(self):
        ring = RingParams(4, 17)
        assert tile_reduce(np.zeros(7, np.int64), ring).tolist() == [0] * 4
        w = np.array([5, 16, 34, 60, 61, 52, 32])
        assert tile_reduce(w, ring).tolist() == [12, 15, 2, 9]

    @pytest.mark.parametrize("n,k", [(4, 4), (256, 16), (8192, 16), (64, 30), (16, 64)])
    def test_reduce_maximal_magnitude(self, n, k):
        for phi in Phi:
            ring = ring_of(n, k, phi)
            top = n * (ring.q - 1) ** 2
            w = np.array([top] * (2 * n - 1), dtype=ring.wide_dtype())
            neg = phi is Phi.X_N_PLUS_1
            expect = [v % ring.q for v in oracles.long_division_remainder([top] * (2 * n - 1), n, neg)]
            assert [int(v) for v in tile_reduce(w, ring)] == expect


class TestSimulatePmm:
    def test_unit_input_returns_operand(self):
        ring = ring_of(64, 16)
        a, fab = fabric_for(ring)
        assert simulate_pmm(fab, Polynomial.unit(ring)).result == a

    @pytest.mark.parametrize("n", [4, 8, 16, 32, 64, 128, 256])
    @pytest.mark.parametrize("k", [8, 16])
    def test_exact_against_reference(self, n, k):
        for phi in Phi:
            ring = ring_of(n, k, phi)
            B = random_coeffs(ring, np.random.default_rng(n + k), 25)
            outs = []
            for mode in MappingMode:
                a, fab = fabric_for(ring, mode, seed=n)
                out, trace, noisy = simulate_pmm_batch(fab, B)
                assert not noisy
                expect = pmm_reference_batch(np.repeat([a.coeffs], len(B), axis=0), B, ring)
                assert np.array_equal(out, expect)
                outs.append(out)
            assert np.array_equal(outs[0], outs[1])

    @pytest.mark.parametrize("n,k", [(8, 40), (4, 64)])
    def test_wide_bitwidths(self, n, k):
        ring = ring_of(n, k)
        a, fab = fabric_for(ring, xbar=CrossbarConfig(16, 16, cols_per_adc=4))
        b = Polynomial.random(ring, np.random.default_rng(5))
        assert simulate_pmm(fab, b).result == pmm_reference(a, b)

    def test_lossy_adc_diverges(self):
        ring = ring_of(256, 16)
        a = Polynomial((ring.q - 1,) * 256, ring)
        fab = make_fabric(a, FabricConfig(CrossbarConfig(adc_bits=4), ring))
        b = Polynomial((ring.q - 1,) * 256, ring)
        assert simulate_pmm(fab, b).result != pmm_reference(a, b)

    def test_ring_mismatch(self):
        _, fab = fabric_for(ring_of(16, 8))
        with pytest.raises(ParameterError):
            simulate_pmm(fab, Polynomial.zero(ring_of(16, 16)))
        with pytest.raises(ParameterError):
            simulate_pmm_batch(fab, np.zeros((2, 8), np.int64))

    def test_initiation_interval_n256_k16(self):
        _, fab = fabric_for(ring_of(256, 16))
        trace = simulate_pmm(fab, Polynomial.zero(fab.ring)).trace
        # derived from the default stage constants
        assert trace.initiation_interval == 128
        assert 64 <= trace.initiation_interval <= 256

    def test_counters_match_plan(self):
        for mode in MappingMode:
            ring = ring_of(128, 16)
            _, fab = fabric_for(ring, mode)
            B = random_coeffs(ring, np.random.default_rng(0), 3)
            _, trace, _ = simulate_pmm_batch(fab, B)
            expect = event_counters(fab.plan, ring.k)
            assert trace.counters == {k: 3 * v for k, v in expect.items()}
            assert expect["adc_conversions"] == fab.plan.active_count * XB.cols * ring.k

    def test_deterministic(self):
        ring = ring_of(32, 8)
        cfg = FabricConfig(CrossbarConfig(noise_sigma=0.3), ring)
        a = Polynomial.random(ring, np.random.default_rng(0))
        b = Polynomial.random(ring, np.random.default_rng(1))
        r1 = simulate_pmm(make_fabric(a, cfg), b, noise_seed=7)
        r2 = simulate_pmm(make_fabric(a, cfg), b, noise_seed=7)
        assert r1.result == r2.result and r1.trace.to_jsonl() == r2.trace.to_jsonl()
        assert r1.noisy and r1.error_stats is not None

    def test_noise_seed_none_is_exact(self):
        ring = ring_of(32, 8)
        cfg = FabricConfig(CrossbarConfig(noise_sigma=0.3), ring)
        a = Polynomial.random(ring, np.random.default_rng(0))
        b = Polynomial.random(ring, np.random.default_rng(1))
        res = simulate_pmm(make_fabric(a, cfg), b)
        assert not res.noisy and res.result == pmm_reference(a, b)

    @given(st.integers(1, 60))
    @settings(max_examples=15, deadline=None)
    def test_budget_monotonic(self, budget):
        ring = ring_of(256, 16)
        plan = make_plan(Polynomial.random(ring, np.random.default_rng(0)), ring, XB, "bit")
        ii = schedule_pipeline(plan.with_budget(budget), 1).initiation_interval
        half = max(1, budget // 2)
        assert schedule_pipeline(plan.with_budget(half), 1).initiation_interval >= ii


class TestSchedule:
    def plan(self):
        ring = ring_of(256, 16)
        return make_plan(Polynomial.random(ring, np.random.default_rng(0)), ring, XB, "bit")

    def test_single(self):
        t = schedule_pipeline(self.plan(), 1)
        assert t.total_cycles == t.fill_latency
        assert t.initiation_interval == max(t.stage_busy.values())

    def test_steady_state(self):
        t = schedule_pipeline(self.plan(), 1000)
        assert t.total_cycles == t.fill_latency + 999 * t.initiation_interval

    def test_completion_rate_converges(self):
        t = schedule_pipeline(self.plan(), 1000)
        ends = [end for _, _, end in t.intervals["TILE_REDUCE"]]
        rate = (len(ends) - 1) / (ends[-1] - ends[0])
        assert abs(rate - 1 / t.initiation_interval) <= 0.01 / t.initiation_interval

    def test_balanced_stages(self):
        plan = self.plan()
        cfg = FabricConfig(XB, plan.ring, reduce_cycles_per_batch=64, accumulate_cycles_per_level=32)
        t = schedule_pipeline(plan, 5, cfg)
        busy = t.stage_busy
        assert busy["TILE_REDUCE"] == busy["TILE_ACCUMULATE"] == busy["PE_COMPUTE"] == 128
        assert t.initiation_interval == 128

    def test_bad_batch(self):
        with pytest.raises(ParameterError):
            schedule_pipeline(self.plan(), 0)

    def test_jsonl_records(self):
        t = schedule_pipeline(self.plan(), 3)
        recs = [json.loads(line) for line in t.to_jsonl().splitlines()]
        assert recs[-1]["type"] == "summary" and recs[-1]["pmm_count"] == 3
        events = recs[:-1]
        assert len(events) == 3 * len(STAGES)
        assert all(e["end"] > e["start"] for e in events)
        # no stage ever overlaps itself
        for s in STAGES:
            iv = sorted((e["start"], e["end"]) for e in events if e["stage"] == s)
            assert all(b[0] >= a[1] for a, b in zip(iv, iv[1:]))


class TestGenericAndNtt:
    def test_generic_conventional_matches_integer_product(self):
        w = DenseWeights(np.random.default_rng(0).integers(0, 4, (4, 4)), 2)
        cfg = CrossbarConfig(2, 2, cols_per_adc=1)
        x = np.random.default_rng(1).integers(0, 8, (5, 4))
        for plan in (plan_weights_bit_mapping(w, cfg), plan_weights_conventional(w, cfg)):
            out = simulate_generic(load_operand(plan), x, 3)
            assert np.array_equal(np.asarray(out, dtype=np.int64), x @ w.values)

    @pytest.mark.parametrize("n,q", [(4, 17), (8, 17), (16, 97), (16, 7681)])
    def test_ntt_on_xbar_noiseless(self, n, q):
        for phi in Phi:
            ring = RingParams(n, q, phi)
            ctx = ntt_context_new(ring)
            rng = np.random.default_rng(n)
            a, b = Polynomial.random(ring, rng), Polynomial.random(ring, rng)
            assert simulate_pmm_ntt_on_xbar(a, b, ctx, XB).result == pmm_reference(a, b)

    def test_ntt_on_xbar_zero(self):
        ring = RingParams(8, 17)
        ctx = ntt_context_new(ring)
        z = Polynomial.zero(ring)
        res = simulate_pmm_ntt_on_xbar(z, Polynomial.random(ring, np.random.default_rng(0)), ctx, XB, noise_seed=1)
        assert res.result == z and not res.noisy

    def test_ntt_on_xbar_noisy_reports_errors(self):
        ring = RingParams(16, 97)
        ctx = ntt_context_new(ring)
        rng = np.random.default_rng(0)
        a, b = Polynomial.random(ring, rng), Polynomial.random(ring, rng)
        res = simulate_pmm_ntt_on_xbar(a, b, ctx, CrossbarConfig(noise_sigma=0.5), noise_seed=3)
        assert res.noisy and res.error_stats["error_rate"] > 0

    def test_error_stats_centered(self):
        s = error_stats([[0, 16, 3]], [[1, 0, 3]], 17)
        assert s["abs_errors"] == [1, 1, 0]
        assert s["max_abs_error"] == 1 and s["error_rate"] == pytest.approx(2 / 3)

    def test_fault_hook_breaks_reduction(self):
        ring = ring_of(16, 8)
        a, fab = fabric_for(ring)
        B = random_coeffs(ring, np.random.default_rng(0), 4)
        bp = barrett_precompute(ring.q, ring.k)
        from xbarpmm.poly import BarrettParams

        bad = BarrettParams(bp.q, bp.m, bp.mu // 2)
        good, _, _ = simulate_pmm_batch(fab, B, bp=bp)
        wrong, _, _ = simulate_pmm_batch(fab, B, bp=bad)
        assert not np.array_equal(good, wrong)
