"""Paired Monte-Carlo comparison of Conv1D and NTT-on-crossbar noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy
from scipy import stats

from .crossbar import CrossbarConfig
from .poly import Phi, Polynomial, RingParams, ntt_context_new
from .sim import FabricConfig, build_ntt_fabric, make_fabric, simulate_pmm, simulate_pmm_ntt_on_xbar

PAIR_COLUMNS = ("sigma", "n", "q", "seed", "conv_mean_abs_error", "ntt_mean_abs_error",
                "conv_error_rate", "ntt_error_rate")
PAIR_SCHEMA = "# schema: xbarpmm-noise-pairs v1"


def smallest_ntt_prime(n: int, phi: Phi = Phi.X_N_PLUS_1) -> int:
    step = 2 * n if phi is Phi.X_N_PLUS_1 else n
    q = step + 1
    while not sympy.isprime(q):
        q += step
    return q


def paired_errors(ring: RingParams, sigma: float, seeds, xbar: CrossbarConfig | None = None,
                  flip_prob: float = 0.0) -> list:
    """One row per seed; both paths see the same operands and the same seed."""
    base = xbar or CrossbarConfig()
    cfg = CrossbarConfig(base.rows, base.cols, base.adc_bits, base.cols_per_adc, sigma, flip_prob)
    ctx = ntt_context_new(ring)
    nf = build_ntt_fabric(ctx, cfg)
    fc = FabricConfig(cfg, ring)
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        a = Polynomial.random(ring, rng)
        b = Polynomial.random(ring, rng)
        conv = simulate_pmm(make_fabric(a, fc), b, noise_seed=seed)
        ntt = simulate_pmm_ntt_on_xbar(a, b, ctx, cfg, noise_seed=seed, fabric=nf)
        ce = conv.error_stats or {"mean_abs_error": 0.0, "error_rate": 0.0}
        ne = ntt.error_stats or {"mean_abs_error": 0.0, "error_rate": 0.0}
        rows.append({
            "sigma": sigma, "n": ring.n, "q": ring.q, "seed": seed,
            "conv_mean_abs_error": ce["mean_abs_error"], "ntt_mean_abs_error": ne["mean_abs_error"],
            "conv_error_rate": ce["error_rate"], "ntt_error_rate": ne["error_rate"],
        })
    return rows


@dataclass
class OrderingTest:
    sigma: float
    n: int
    q: int
    seeds: int
    mean_conv: float
    mean_ntt: float
    mean_diff: float
    lower_bound: float
    holds: bool


def ordering_test(rows: list, confidence: float = 0.95) -> OrderingTest:
    """NTT error >= Conv1D error holds when the one-sided lower confidence bound
    of the paired mean difference is >= 0."""
    d = np.array([r["ntt_mean_abs_error"] - r["conv_mean_abs_error"] for r in rows])
    mean = float(d.mean())
    if len(d) > 1 and d.std(ddof=1) > 0:
        se = d.std(ddof=1) / math.sqrt(len(d))
        lb = mean - stats.t.ppf(confidence, len(d) - 1) * se
    else:
        lb = mean
    r0 = rows[0]
    return OrderingTest(r0["sigma"], r0["n"], r0["q"], len(rows),
                        float(np.mean([r["conv_mean_abs_error"] for r in rows])),
                        float(np.mean([r["ntt_mean_abs_error"] for r in rows])),
                        mean, float(lb), bool(lb >= 0))


def noise_study(sigmas, degrees, n_seeds: int, xbar: CrossbarConfig | None = None, seed0: int = 0,
                phi: Phi = Phi.X_N_PLUS_1):
    """Returns (per-seed pair rows, per-configuration tests), sigma-major order."""
    pairs, tests = [], []
    for sigma in sigmas:
        for n in degrees:
            ring = RingParams(n, smallest_ntt_prime(n, phi), phi)
            rows = paired_errors(ring, sigma, range(seed0, seed0 + n_seeds), xbar)
            pairs.extend(rows)
            tests.append(ordering_test(rows))
    return pairs, tests
