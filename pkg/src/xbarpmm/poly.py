"""Exact arithmetic in Z_q[x]/phi(x).

Reference PMM paths (schoolbook convolution and NTT), degree folding and the
shift-based Barrett reduction used by the fabric's reduction unit. Everything
here is exact; nothing depends on the crossbar model.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidModulusError, OperandRangeError, ParameterError, UnsupportedParametersError

MIN_DEGREE = 4
MAX_DEGREE = 8192


class Phi(str, enum.Enum):
    X_N_PLUS_1 = "x^n+1"
    X_N_MINUS_1 = "x^n-1"

    @classmethod
    def parse(cls, text: str) -> "Phi":
        t = text.strip().lower().replace(" ", "")
        if t in ("x^n+1", "x_n_plus_1", "negacyclic", "plus"):
            return cls.X_N_PLUS_1
        if t in ("x^n-1", "x_n_minus_1", "cyclic", "minus"):
            return cls.X_N_MINUS_1
        raise ParameterError(f"unknown modulus polynomial {text!r}")


def _is_pow2(v: int) -> bool:
    return v > 0 and v & (v - 1) == 0


def check_modulus(q: int, k: int) -> None:
    if not 2 <= k <= 64:
        raise InvalidModulusError(f"bitwidth k={k} outside [2, 64]")
    if q % 2 == 0:
        raise InvalidModulusError(f"modulus q={q} must be odd")
    if not (1 << (k - 1)) < q < (1 << k):
        raise InvalidModulusError(f"modulus q={q} not a {k}-bit value with 2^(k-1) < q < 2^k")


@dataclass(frozen=True)
class RingParams:
    n: int
    q: int
    phi: Phi = Phi.X_N_PLUS_1

    def __post_init__(self):
        if not _is_pow2(self.n) or not MIN_DEGREE <= self.n <= MAX_DEGREE:
            raise ParameterError(f"degree n={self.n} must be a power of two in [{MIN_DEGREE}, {MAX_DEGREE}]")
        object.__setattr__(self, "phi", Phi(self.phi))
        check_modulus(self.q, max(2, self.q.bit_length()))

    @property
    def k(self) -> int:
        # q is odd and not a power of two, so ceil(log2 q) == bit_length
        return self.q.bit_length()

    @property
    def acc_bits(self) -> int:
        """Bits needed for any signed unreduced sum (n*(q-1)^2 plus fold sign)."""
        return 2 * self.k + math.ceil(math.log2(self.n)) + 1

    def wide_dtype(self):
        # int64 only while products in the reduction path stay below 2^62
        return np.int64 if self.acc_bits + 1 <= 62 and 3 * self.k + 2 <= 62 else object

    def ntt_friendly(self) -> bool:
        step = 2 * self.n if self.phi is Phi.X_N_PLUS_1 else self.n
        return self.q % step == 1


def default_modulus(n: int, k: int, phi: Phi = Phi.X_N_PLUS_1) -> int:
    """Largest k-bit prime usable for NTT under phi, else largest k-bit prime, else 2^k - 1."""
    import sympy

    step = 2 * n if phi is Phi.X_N_PLUS_1 else n
    hi, lo = (1 << k) - 1, (1 << (k - 1)) + 1
    top = hi - ((hi - 1) % step)
    for q in range(top, lo - 1, -step):
        if q % 2 and sympy.isprime(q):
            return q
    q = sympy.prevprime(1 << k) if k > 2 else 3
    if q >= lo:
        return int(q)
    return hi


@dataclass(frozen=True)
class Polynomial:
    coeffs: tuple
    ring: RingParams

    def __post_init__(self):
        c = tuple(int(x) for x in self.coeffs)
        if len(c) != self.ring.n:
            raise ParameterError(f"expected {self.ring.n} coefficients, got {len(c)}")
        if any(x < 0 or x >= self.ring.q for x in c):
            raise ParameterError("coefficients must lie in [0, q)")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, ring: RingParams) -> "Polynomial":
        return cls((0,) * ring.n, ring)

    @classmethod
    def unit(cls, ring: RingParams) -> "Polynomial":
        return cls((1,) + (0,) * (ring.n - 1), ring)

    @classmethod
    def random(cls, ring: RingParams, rng: np.random.Generator) -> "Polynomial":
        return cls(tuple(int(x) for x in random_coeffs(ring, rng, 1)[0]), ring)

    def array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=np.int64 if self.ring.k < 63 else object)

    def __len__(self):
        return self.ring.n

    def __getitem__(self, i):
        return self.coeffs[i]


def random_coeffs(ring: RingParams, rng: np.random.Generator, count: int) -> np.ndarray:
    """count x n uniformly random residues."""
    if ring.k <= 62:
        return rng.integers(0, ring.q, size=(count, ring.n), dtype=np.int64)
    out = np.empty((count, ring.n), dtype=object)
    for idx in np.ndindex(out.shape):
        out[idx] = int.from_bytes(rng.bytes(16), "little") % ring.q
    return out


@dataclass(frozen=True)
class WideVector:
    vals: tuple

    def __len__(self):
        return len(self.vals)

    def __getitem__(self, i):
        return self.vals[i]


def poly_mul_conv1d(a: Polynomial, b: Polynomial, p: RingParams | None = None) -> WideVector:
    """Linear convolution of the coefficient vectors, no reduction."""
    p = p or a.ring
    if a.ring != p or b.ring != p:
        raise ParameterError("operands do not belong to the given ring")
    if p.wide_dtype() is np.int64:
        vals = np.convolve(np.asarray(a.coeffs, np.int64), np.asarray(b.coeffs, np.int64))
        return WideVector(tuple(int(v) for v in vals))
    n = p.n
    out = [0] * (2 * n - 1)
    for j, aj in enumerate(a.coeffs):
        if aj:
            for l, bl in enumerate(b.coeffs):
                out[j + l] += aj * bl
    return WideVector(tuple(out))


def reduce_degree(w: WideVector | Sequence[int], p: RingParams) -> list:
    n = p.n
    vals = list(w.vals if isinstance(w, WideVector) else w)
    if len(vals) != 2 * n - 1:
        raise ParameterError(f"wide vector must have {2 * n - 1} entries, got {len(vals)}")
    vals.append(0)
    if p.phi is Phi.X_N_PLUS_1:
        return [vals[i] - vals[i + n] for i in range(n)]
    return [vals[i] + vals[i + n] for i in range(n)]


def reduce_degree_array(w: np.ndarray, p: RingParams) -> np.ndarray:
    """Batched reduce_degree over the last axis (length 2n-1)."""
    n = p.n
    lo = w[..., :n].copy()
    hi = w[..., n:]
    if p.phi is Phi.X_N_PLUS_1:
        lo[..., : n - 1] -= hi
    else:
        lo[..., : n - 1] += hi
    return lo


@dataclass(frozen=True)
class BarrettParams:
    q: int
    m: int
    mu: int

    @property
    def limit(self) -> int:
        """Exclusive upper bound of admissible barrett_reduce inputs."""
        return 1 << self.m


def barrett_precompute(q: int, k: int) -> BarrettParams:
    check_modulus(q, k)
    m = 2 * k
    return BarrettParams(q=q, m=m, mu=(1 << m) // q)


def barrett_reduce(x: int, bp: BarrettParams) -> int:
    if x < 0 or x >= bp.limit:
        raise OperandRangeError(f"barrett input {x} outside [0, 2^{bp.m})")
    t = x - bp.q * ((x * bp.mu) >> bp.m)
    if t >= bp.q:
        t -= bp.q
    if t >= bp.q:
        t -= bp.q
    return t


def barrett_reduce_array(x: np.ndarray, bp: BarrettParams) -> np.ndarray:
    """Vectorized barrett_reduce; same admissible range, no range check."""
    t = x - bp.q * ((x * bp.mu) >> bp.m)
    t = np.where(t >= bp.q, t - bp.q, t)
    return np.where(t >= bp.q, t - bp.q, t)


def pmm_reference(a: Polynomial, b: Polynomial, p: RingParams | None = None) -> Polynomial:
    """Ground-truth PMM: convolution, degree fold, coefficient reduction."""
    p = p or a.ring
    folded = reduce_degree(poly_mul_conv1d(a, b, p), p)
    return Polynomial(tuple(v % p.q for v in folded), p)


def pmm_reference_batch(A: np.ndarray, B: np.ndarray, p: RingParams) -> np.ndarray:
    """Row-wise pmm_reference on (m, n) coefficient arrays."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    out = np.empty(A.shape, dtype=A.dtype if p.wide_dtype() is np.int64 else object)
    for i in range(A.shape[0]):
        if p.wide_dtype() is np.int64:
            w = np.convolve(A[i].astype(np.int64), B[i].astype(np.int64))
            out[i] = reduce_degree_array(w, p) % p.q
        else:
            a = Polynomial(tuple(A[i]), p)
            b = Polynomial(tuple(B[i]), p)
            out[i] = pmm_reference(a, b, p).coeffs
    return out


# --- NTT ---------------------------------------------------------------

@dataclass(frozen=True)
class NttContext:
    params: RingParams
    omega: int
    psi: int | None
    n_inv: int
    twiddles: tuple
    inv_twiddles: tuple
    psi_powers: tuple
    psi_inv_powers: tuple


def _order_divides(x: int, e: int, q: int) -> bool:
    return pow(x, e, q) == 1


def _is_primitive_root_of_order(x: int, order: int, q: int) -> bool:
    # order is a power of two, so x is primitive iff x^(order/2) == -1
    return pow(x, order // 2, q) == q - 1


def _search_root(order: int, q: int) -> int | None:
    if q < (1 << 20):
        for x in range(2, q):
            if _is_primitive_root_of_order(x, order, q):
                return x
        return None
    if (q - 1) % order:
        return None
    best = None
    for g in range(2, 2000):
        cand = pow(g, (q - 1) // order, q)
        if _is_primitive_root_of_order(cand, order, q) and (best is None or cand < best):
            best = cand
    return best


def ntt_context_new(p: RingParams) -> NttContext:
    q, n = p.q, p.n
    if q % 2 == 0 or not p.ntt_friendly():
        raise UnsupportedParametersError(f"q={q} admits no NTT of size {n} for {p.phi.value}")
    psi = None
    if p.phi is Phi.X_N_PLUS_1:
        psi = _search_root(2 * n, q)
        if psi is None:
            raise UnsupportedParametersError(f"no primitive {2 * n}-th root of unity mod {q}")
        omega = psi * psi % q
    else:
        omega = _search_root(n, q)
        if omega is None:
            raise UnsupportedParametersError(f"no primitive {n}-th root of unity mod {q}")
    if pow(omega, n, q) != 1 or pow(omega, n // 2, q) == 1:
        raise UnsupportedParametersError("root order verification failed")
    omega_inv = pow(omega, -1, q)
    tw = tuple(pow(omega, i, q) for i in range(n // 2))
    itw = tuple(pow(omega_inv, i, q) for i in range(n // 2))
    if psi is not None:
        psi_inv = pow(psi, -1, q)
        pp = tuple(pow(psi, i, q) for i in range(n))
        pip = tuple(pow(psi_inv, i, q) for i in range(n))
    else:
        pp = pip = (1,) * n
    return NttContext(p, omega, psi, pow(n, -1, q), tw, itw, pp, pip)


def _bit_reverse(vec: list) -> list:
    n = len(vec)
    bits = n.bit_length() - 1
    return [vec[int(format(i, f"0{bits}b")[::-1], 2)] for i in range(n)]


def _ntt_core(vec: list, tw: tuple, q: int) -> list:
    """Iterative radix-2 Cooley-Tukey, natural-order in and out."""
    n = len(vec)
    a = _bit_reverse(vec)
    length = 2
    while length <= n:
        half = length // 2
        step = n // length
        for start in range(0, n, length):
            for j in range(half):
                w = tw[j * step]
                u = a[start + j]
                v = a[start + j + half] * w % q
                a[start + j] = (u + v) % q
                a[start + j + half] = (u - v) % q
        length *= 2
    return a


def ntt_forward(a: Polynomial | Sequence[int], ctx: NttContext) -> list:
    q = ctx.params.q
    coeffs = a.coeffs if isinstance(a, Polynomial) else a
    pre = [c * s % q for c, s in zip(coeffs, ctx.psi_powers)]
    return _ntt_core(pre, ctx.twiddles, q)


def ntt_inverse(v: Sequence[int], ctx: NttContext) -> Polynomial:
    p = ctx.params
    q = p.q
    t = _ntt_core(list(v), ctx.inv_twiddles, q)
    out = [x * ctx.n_inv % q * s % q for x, s in zip(t, ctx.psi_inv_powers)]
    return Polynomial(tuple(out), p)


def pmm_via_ntt(a: Polynomial, b: Polynomial, ctx: NttContext) -> Polynomial:
    q = ctx.params.q
    fa = ntt_forward(a, ctx)
    fb = ntt_forward(b, ctx)
    return ntt_inverse([x * y % q for x, y in zip(fa, fb)], ctx)


def twiddle_matrix(ctx: NttContext) -> list:
    """Dense n x n forward transform: v_j = sum_i a_i * T[i][j] (psi folded in)."""
    p = ctx.params
    q, n = p.q, p.n
    if ctx.psi is None:
        return [[pow(ctx.omega, i * j, q) for j in range(n)] for i in range(n)]
    return [[pow(ctx.psi, i * (2 * j + 1), q) for j in range(n)] for i in range(n)]


def inverse_twiddle_matrix(ctx: NttContext) -> list:
    """Dense n x n inverse: a_i = sum_j v_j * U[j][i] (n^-1 and psi^-1 folded in)."""
    p = ctx.params
    q, n = p.q, p.n
    base = pow(ctx.psi if ctx.psi is not None else ctx.omega, -1, q)
    if ctx.psi is None:
        return [[ctx.n_inv * pow(base, i * j, q) % q for i in range(n)] for j in range(n)]
    return [[ctx.n_inv * pow(base, i * (2 * j + 1), q) % q for i in range(n)] for j in range(n)]
