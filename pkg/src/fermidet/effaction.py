"""Exact effective actions on tiny index sets and the convergence bound.

An interaction on a finite index set ``X = {0..n-1}`` is a polynomial in the
Grassmann fields ``psibar_x, psi_x``. Inside the exterior algebra over
``C^(2n)`` the generator ``psibar_x`` has index ``x`` and ``psi_x`` has index
``n + x``, so a sorted monomial always lists barred fields first.

``W(V, C) = log int dmu_C(Psi') exp V(Psi' + Psi)`` is computed in the
doubled algebra over ``C^(4n)``: internal fields take indices ``0..2n-1`` and
external ones ``2n..4n-1``. Because internal generators come first, a doubled
monomial factorizes as ``e_int ^ e_ext`` without a sign and the Gaussian
integral acts on the internal factor alone.

Integrals over ``X`` use counting measure.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import DomainError
from .grassmann import MAX_DIMENSION, DimensionError, Multivector, _bits, gaussian_integral, permutation_sign

MAX_SITES = MAX_DIMENSION // 4


# ---------------------------------------------------------------- kernels


def antisymmetrize(kernel: np.ndarray, n_bar: int) -> np.ndarray:
    """Average over signed permutations of the barred slots and, separately, the plain slots."""
    kernel = np.asarray(kernel, dtype=complex)
    k = kernel.ndim
    out = np.zeros_like(kernel)
    groups = [list(range(n_bar)), list(range(n_bar, k))]
    count = 0
    for pb in itertools.permutations(groups[0]):
        for pp in itertools.permutations(groups[1]):
            out += permutation_sign(pb) * permutation_sign(pp) * np.transpose(kernel, list(pb) + list(pp))
            count += 1
    return out / count


def is_antisymmetric(kernel: np.ndarray, n_bar: int, tol: float = 1e-14) -> bool:
    scale = max(1.0, float(np.max(np.abs(kernel), initial=0.0)))
    return float(np.max(np.abs(kernel - antisymmetrize(kernel, n_bar)), initial=0.0)) <= tol * scale


@dataclass
class Interaction:
    """Kernels ``v[(m_bar, m)]`` of shape ``(n,) * (m_bar + m)``, stored antisymmetrized."""

    n: int
    kernels: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.n <= MAX_SITES:
            raise DimensionError(f"index set size must lie in 1..{MAX_SITES}, got {self.n}")
        clean = {}
        for (mb, m), v in self.kernels.items():
            if mb + m == 0:
                raise ValueError("field-independent kernels are not part of an interaction")
            if mb > self.n or m > self.n:
                raise DimensionError(f"kernel {(mb, m)} does not fit an index set of size {self.n}")
            v = np.asarray(v, dtype=complex)
            if v.shape != (self.n,) * (mb + m):
                raise ValueError(f"kernel {(mb, m)} has shape {v.shape}")
            clean[(mb, m)] = antisymmetrize(v, mb)
        self.kernels = clean

    @classmethod
    def zero(cls, n: int) -> "Interaction":
        return cls(n, {})

    def scale(self, lam: complex) -> "Interaction":
        return Interaction(self.n, {k: lam * v for k, v in self.kernels.items()})

    def to_multivector(self) -> Multivector:
        return kernels_to_multivector(self.kernels, self.n)

    @classmethod
    def from_multivector(cls, mv: Multivector, n: int) -> "Interaction":
        return cls(n, multivector_to_kernels(mv, n))


def quartic_vertex(n: int, U: complex, sites=(0, 1)) -> Interaction:
    """``U psibar_a psibar_b psi_b psi_a`` written as an antisymmetrized ``(2, 2)`` kernel."""
    a, b = sites
    v = np.zeros((n,) * 4, dtype=complex)
    # psibar_a psibar_b psi_b psi_a = -psibar_a psibar_b psi_a psi_b
    v[a, b, a, b] = -U
    return Interaction(n, {(2, 2): v})


def _monomial_generators(mask: int, n: int):
    """Split a sorted external monomial into barred sites and plain sites."""
    bars = [g for g in _bits(mask) if g < n]
    plains = [g - n for g in _bits(mask) if g >= n]
    return bars, plains


def kernels_to_multivector(kernels: dict, n: int) -> Multivector:
    """``sum v(a; b) psibar_a1 .. psi_bm`` with the sum over all index tuples."""
    coeffs = {}
    for (mb, m), v in kernels.items():
        fac = math.factorial(mb) * math.factorial(m)
        for a in itertools.combinations(range(n), mb):
            for b in itertools.combinations(range(n), m):
                c = v[a + b]
                if c != 0:
                    mask = sum(1 << x for x in a) | sum(1 << (n + y) for y in b)
                    coeffs[mask] = coeffs.get(mask, 0j) + fac * c
    return Multivector(2 * n, coeffs)


def multivector_to_kernels(mv: Multivector, n: int, drop_scalar: bool = True) -> dict:
    """Inverse of :func:`kernels_to_multivector` (the scalar part is dropped)."""
    if mv.dim != 2 * n:
        raise DimensionError(f"expected an algebra over C^{2 * n}, got C^{mv.dim}")
    out: dict = {}
    for mask, c in mv.coeffs.items():
        if mask == 0 and drop_scalar:
            continue
        bars, plains = _monomial_generators(mask, n)
        mb, m = len(bars), len(plains)
        v = out.setdefault((mb, m), np.zeros((n,) * (mb + m), dtype=complex))
        base = c / (math.factorial(mb) * math.factorial(m))
        for pb in itertools.permutations(range(mb)):
            for pp in itertools.permutations(range(m)):
                idx = tuple(bars[i] for i in pb) + tuple(plains[i] for i in pp)
                v[idx] = permutation_sign(pb) * permutation_sign(pp) * base
    return out


def kernel_abs(kernel: np.ndarray) -> float:
    """``max_i max_{X_i} sum_{j != i} |v|``: the pinned-slot norm with counting measure."""
    a = np.abs(np.asarray(kernel))
    if a.ndim == 0:
        return float(a)
    return float(max(a.sum(axis=tuple(j for j in range(a.ndim) if j != i)).max() for i in range(a.ndim)))


def kernel_norm(V, h: float) -> float:
    """``||V||_h = sum_{m_bar + m >= 1} |v_{m_bar,m}| h**(m_bar + m)``."""
    if h <= 0:
        raise ValueError("h must be positive")
    kernels = V.kernels if isinstance(V, Interaction) else V
    return float(sum(kernel_abs(v) * h ** (mb + m) for (mb, m), v in kernels.items() if mb + m >= 1))


# ---------------------------------------------------------------- doubled algebra


def _check_covariance(C, n: int) -> np.ndarray:
    C = np.asarray(C, dtype=complex)
    if C.shape != (n, n):
        raise ValueError(f"covariance must be {n}x{n}, got {C.shape}")
    return C


def shift_fields(F: Multivector, n: int) -> Multivector:
    """``F(Psi' + Psi)`` in the doubled algebra."""
    if 4 * n > MAX_DIMENSION:
        raise DimensionError(f"doubled algebra needs {4 * n} generators, budget is {MAX_DIMENSION}")
    dim = 4 * n
    out = Multivector(dim, {})
    for mask, c in F.coeffs.items():
        term = Multivector.scalar(dim, c)
        for g in _bits(mask):
            term = term * Multivector(dim, {1 << g: 1.0, 1 << (g + 2 * n): 1.0})
        out = out + term
    return out


def integrate_internal(F: Multivector, C: np.ndarray, n: int) -> Multivector:
    """``int dmu_C(Psi') F(Psi', Psi)`` as an element of the external algebra."""
    low = (1 << (2 * n)) - 1
    cache: dict = {}
    coeffs: dict = {}
    for mask, c in F.coeffs.items():
        internal, external = mask & low, mask >> (2 * n)
        if internal not in cache:
            fields = [(g < n, g % n) for g in _bits(internal)]
            cache[internal] = gaussian_integral(C, fields)
        val = cache[internal]
        if val != 0:
            coeffs[external] = coeffs.get(external, 0j) + c * val
    return Multivector(2 * n, coeffs)


def _nilpotent_exp(N: Multivector) -> Multivector:
    """``exp N`` for ``N`` even with no scalar part (finite series)."""
    out = Multivector.scalar(N.dim, 1.0)
    term = Multivector.scalar(N.dim, 1.0)
    for k in range(1, N.dim // 2 + 2):
        term = (term * N).scale(1.0 / k)
        if not term.coeffs:
            break
        out = out + term
    return out


def _nilpotent_log1p(N: Multivector) -> Multivector:
    """``log(1 + N)`` for ``N`` even with no scalar part."""
    out = Multivector(N.dim, {})
    power = Multivector.scalar(N.dim, 1.0)
    for j in range(1, N.dim // 2 + 2):
        power = power * N
        if not power.coeffs:
            break
        out = out + power.scale((-1) ** (j + 1) / j)
    return out


def _require_even(F: Multivector):
    if any(bin(m).count("1") % 2 for m in F.coeffs):
        raise DomainError("only even interactions are supported (odd parts do not commute)")


def effective_action_mv(F: Multivector, C, n: int) -> Multivector:
    """``W(F, C)`` for an even element ``F`` of the external algebra, scalar part included."""
    C = _check_covariance(C, n)
    _require_even(F)
    s = F.scalar_part
    N = Multivector(F.dim, {m: c for m, c in F.coeffs.items() if m})
    Z = integrate_internal(_nilpotent_exp(shift_fields(N, n)), C, n)
    z0 = Z.scalar_part
    if z0 == 0:
        raise DomainError("the Gaussian convolution of exp(V) has vanishing scalar part; log is undefined")
    rest = Multivector(Z.dim, {m: c / z0 for m, c in Z.coeffs.items() if m})
    return _nilpotent_log1p(rest) + Multivector.scalar(Z.dim, s + np.log(z0))


def effective_action_exact(V: Interaction, C, lam: complex = 1.0) -> tuple[Interaction, complex]:
    """Kernels of ``W(lam V, C)`` and its field-independent part."""
    W = effective_action_mv(V.scale(lam).to_multivector(), C, V.n)
    return Interaction.from_multivector(W, V.n), W.scalar_part


def _series_mul(a: list, b: list, order: int) -> list:
    dim = a[0].dim
    out = [Multivector(dim, {}) for _ in range(order + 1)]
    for i, x in enumerate(a):
        if not x.coeffs:
            continue
        for j, y in enumerate(b[: order + 1 - i]):
            if y.coeffs:
                out[i + j] = out[i + j] + x * y
    return out


def effective_action_series(V: Interaction, C, order: int) -> list:
    """Taylor coefficients ``W_p / p!`` (``p = 0..order``) of ``lam -> W(lam V, C)``.

    ``Z(lam) = sum_k lam**k / k! int V'^k`` is a polynomial; the logarithm is
    expanded as a formal power series in ``lam`` and truncated at ``order``.
    """
    n = V.n
    C = _check_covariance(C, n)
    F = V.to_multivector()
    _require_even(F)
    Vd = shift_fields(F, n)
    Z = [Multivector.scalar(2 * n, 1.0)]
    power = Multivector.scalar(4 * n, 1.0)
    for k in range(1, order + 1):
        power = (power * Vd).scale(1.0 / k)
        Z.append(integrate_internal(power, C, n))
    Y = [Multivector(2 * n, {})] + Z[1:]
    out = [Multivector(2 * n, {}) for _ in range(order + 1)]
    power_series = [Multivector.scalar(2 * n, 1.0)] + [Multivector(2 * n, {}) for _ in range(order)]
    for j in range(1, order + 1):
        power_series = _series_mul(power_series, Y, order)
        for p in range(order + 1):
            if power_series[p].coeffs:
                out[p] = out[p] + power_series[p].scale((-1) ** (j + 1) / j)
    return out


def partition_polynomial(V: Interaction, C) -> list:
    """Coefficients of the polynomial ``lam -> int dmu_C exp(lam V)(Psi' + Psi)``."""
    n = V.n
    C = _check_covariance(C, n)
    Vd = shift_fields(V.to_multivector(), n)
    out = [Multivector.scalar(2 * n, 1.0)]
    power = Multivector.scalar(4 * n, 1.0)
    for k in range(1, 4 * n + 1):
        power = (power * Vd).scale(1.0 / k)
        if not power.coeffs:
            break
        out.append(integrate_internal(power, C, n))
    return out


# ---------------------------------------------------------------- convergence bound


def decay_bound_matrix(C) -> float:
    """``alpha_C`` on a finite set: largest row or column l1 norm."""
    A = np.abs(np.asarray(C))
    return float(max(A.sum(axis=0).max(), A.sum(axis=1).max()))


def gram_determinant_bound(C) -> float | None:
    """``sqrt(max C_xx)`` when ``C`` is hermitian positive semidefinite, else ``None``."""
    C = np.asarray(C, dtype=complex)
    if not np.allclose(C, C.conj().T, atol=1e-12):
        return None
    if np.linalg.eigvalsh(C).min() < -1e-12:
        return None
    return float(math.sqrt(np.max(np.real(np.diag(C)))))


def omega_constant(alpha: float, delta: float) -> float:
    return 2 * alpha / delta**2


def remainder_bound(V: Interaction, lam: float, h: float, alpha: float, delta: float, P: int):
    """``(bound, omega ||lam V||_{h'}, in_domain)`` with fields normalized to ``delta = 1``.

    Rescaling ``Psi -> delta Psi`` maps ``C`` to ``C / delta**2`` and every
    kernel ``v_{m_bar,m}`` to ``delta**(m_bar+m) v``. The bound is applied in
    those units, so ``||.||_h`` below weights a kernel of degree ``k`` by
    ``(delta h)**k``; for ``delta = 1`` this is the unscaled statement.
    """
    omega = omega_constant(alpha, delta)
    x = omega * kernel_norm(V.scale(lam), delta * (h + omega))
    if x >= 1:
        return math.inf, x, False
    return omega**P * (x / omega) ** (P + 1) / (1 - x), x, True


@dataclass
class RemainderPoint:
    lam: float
    P: int
    remainder: float
    bound: float
    contraction: float
    in_domain: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "P": self.P,
            "remainder": self.remainder,
            "bound": self.bound,
            "contraction": self.contraction,
            "in_domain": self.in_domain,
            "pass": self.passed,
        }


def taylor_remainder(V: Interaction, C, lam: float, P: int, series=None) -> Interaction:
    """``W(lam V) - sum_{p <= P} lam**p W_p / p!`` as kernels."""
    series = effective_action_series(V, C, P) if series is None else series
    W = effective_action_mv(V.scale(lam).to_multivector(), C, V.n)
    for p in range(1, P + 1):
        W = W - series[p].scale(lam**p)
    return Interaction.from_multivector(W, V.n)


def taylor_remainder_check(V: Interaction, C, h: float, P_values, lambdas, alpha=None, delta=None) -> dict:
    """Compare the exact order-``P`` remainder with the convergence bound on a coupling grid.

    Out-of-domain points (``omega ||lam V||_{h'} >= 1``) are reported but not failed.
    """
    C = _check_covariance(C, V.n)
    alpha = decay_bound_matrix(C) if alpha is None else float(alpha)
    if delta is None:
        delta = gram_determinant_bound(C)
        if delta is None:
            raise DomainError("no determinant bound supplied and C has no evident Gram representation")
    P_values = list(P_values)
    series = effective_action_series(V, C, max(P_values))
    points = []
    for lam in lambdas:
        for P in P_values:
            R = taylor_remainder(V, C, lam, P, series)
            # the remainder norm is measured in the same delta-normalized units
            rem = kernel_norm(R, delta * h) if R.kernels else 0.0
            bound, x, ok = remainder_bound(V, lam, h, alpha, delta, P)
            passed = (not ok) or rem <= bound * (1 + 1e-9)
            points.append(RemainderPoint(float(lam), P, rem, bound, x, ok, bool(passed)))
    return {
        "alpha": alpha,
        "delta": delta,
        "omega": omega_constant(alpha, delta),
        "h": h,
        "points": [p.to_dict() for p in points],
        "pass": all(p.passed for p in points),
        "in_domain": sum(p.in_domain for p in points),
    }


def in_domain_lambdas(V: Interaction, h: float, alpha: float, delta: float, count: int = 5, fill: float = 0.9):
    """``count`` couplings spread over ``(0, fill * lam_max]`` where ``lam_max`` is the convergence radius."""
    omega = omega_constant(alpha, delta)
    unit = omega * kernel_norm(V, delta * (h + omega))
    if unit == 0:
        return np.linspace(0.2, 1.0, count)
    return fill / unit * np.arange(1, count + 1) / count


def semigroup_defect(V: Interaction, C_low, C_high) -> float:
    """Largest kernel difference between ``W(V, C_< + C_>)`` and ``W(W(V, C_>), C_<)`` (degrees >= 1)."""
    n = V.n
    F = V.to_multivector()
    direct = effective_action_mv(F, np.asarray(C_low) + np.asarray(C_high), n)
    staged = effective_action_mv(effective_action_mv(F, C_high, n), C_low, n)
    diff = direct - staged
    return float(max((abs(c) for m, c in diff.coeffs.items() if m), default=0.0))
