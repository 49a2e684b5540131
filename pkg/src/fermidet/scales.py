"""Frequency-scale decomposition of the covariance and its decay constants.

``C = C_< + C_>`` where the infrared part keeps the Matsubara frequencies
weighted by ``chi_<(omega/Omega)``. Two cutoffs are provided: a smooth
algebraic tail ``1/(1 + x**4)`` (``kappa = 1``, exponent 4) and a strict
C-infinity bump equal to 1 on ``|x| <= 1`` and 0 on ``|x| >= 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    DomainError,
    LatticeModel,
    _smooth_step,
    bare_covariance,
    matsubara_frequencies,
)


@dataclass(frozen=True)
class CutoffFunction:
    kind: str  # "smooth_decay" or "strict_bump"
    kappa: float = 1.0
    alpha_exp: float = 4.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "smooth_decay":
            # 1/(1 + |x|^a / kappa) <= kappa |x|^-a
            return 1.0 / (1.0 + np.abs(x) ** self.alpha_exp / self.kappa)
        if self.kind == "strict_bump":
            return _smooth_step(2.0 - np.abs(x))
        raise ValueError(f"unknown cutoff kind {self.kind!r}")

    def greater(self, x):
        return 1.0 - self(x)

    @property
    def support(self):
        """Largest ``|x|`` with ``chi_<(x) > 0`` (``inf`` for algebraic tails)."""
        return 2.0 if self.kind == "strict_bump" else np.inf


SMOOTH_DECAY = CutoffFunction("smooth_decay", kappa=1.0, alpha_exp=4.0)
STRICT_BUMP = CutoffFunction("strict_bump")


def ir_tail_bound(h_norm: float, cutoff: CutoffFunction, Omega: float, omega_max: float, beta: float) -> float:
    """Upper bound on ``(1/beta) sum_{|w| > omega_max} chi_<(w/Omega) h / |i w - E|``."""
    if cutoff.support * Omega <= omega_max:
        return 0.0
    if omega_max < Omega:
        return np.inf
    lower = omega_max - 2 * np.pi / beta
    if lower <= 0:
        return np.inf
    return h_norm * cutoff.kappa * Omega**cutoff.alpha_exp / (np.pi * cutoff.alpha_exp) * lower ** (-cutoff.alpha_exp)


def default_omega_max(cutoff: CutoffFunction, Omega: float, tol: float = 1e-10, beta: float = 1.0) -> float:
    if cutoff.kind == "strict_bump":
        return cutoff.support * Omega
    return Omega * tol ** (-1.0 / cutoff.alpha_exp) + 2 * np.pi / beta


@dataclass
class ScaleSplit:
    """Precomputed Matsubara data of ``C_<`` for one ``(model, cutoff, Omega)``."""

    model: LatticeModel
    cutoff: CutoffFunction
    Omega: float
    omega_max: float
    tail_bound: float
    frequencies: np.ndarray = field(repr=False)
    site_table: np.ndarray = field(repr=False)  # (n_omega, n_sites)

    def ir(self, tau, site_index=None):
        """``C_<(tau, x)`` on all sites (or the given site indices); shape ``tau.shape + (sites,)``."""
        tau = np.asarray(tau, dtype=float)
        table = self.site_table if site_index is None else self.site_table[:, site_index]
        phase = np.exp(-1j * tau[..., None] * self.frequencies)
        return phase @ table

    def full(self, tau, site_index=None):
        return full_kernel_sites(tau, self.model, site_index)

    def uv(self, tau, site_index=None):
        return self.full(tau, site_index) - self.ir(tau, site_index)


def _phase_to_sites(model: LatticeModel) -> np.ndarray:
    """``exp(i p.x)`` with shape ``(n_momenta, n_sites)``."""
    return np.exp(1j * model.momenta @ model.sites.T)


def full_kernel_sites(tau, model: LatticeModel, site_index=None):
    """``C(tau, x)`` for all sites, from the closed-form time kernel."""
    tau = np.asarray(tau, dtype=float)
    bc = bare_covariance(tau[..., None], model.energies, model.beta)
    phase = _phase_to_sites(model)
    if site_index is not None:
        phase = phase[:, site_index]
    return (bc * (model.h_values / model.volume)) @ phase


def scale_split(model: LatticeModel, cutoff: CutoffFunction, Omega: float, omega_max=None, tol: float = 1e-10):
    if Omega < 1:
        raise DomainError(f"Omega must be >= 1, got {Omega}")
    if omega_max is None:
        omega_max = default_omega_max(cutoff, Omega, tol, model.beta)
    tail = ir_tail_bound(model.h_norm, cutoff, Omega, omega_max, model.beta)
    if tail > tol:
        raise DomainError(
            f"omega_max={omega_max:g} leaves a Matsubara tail up to {tail:.3g} > tolerance {tol:.3g}"
        )
    w = matsubara_frequencies(model.beta, omega_max)
    w = w[cutoff(w / Omega) > 0]
    E = model.energies
    weights = cutoff(w / Omega)[:, None] * model.h_values[None, :] / (1j * w[:, None] - E[None, :])
    table = weights @ _phase_to_sites(model) / (model.beta * model.volume)
    return ScaleSplit(model, cutoff, Omega, omega_max, tail, w, table)


def _site_index(model: LatticeModel, x) -> int:
    x = np.mod(np.atleast_1d(np.asarray(x, dtype=int)), model.L)
    return int(np.ravel_multi_index(tuple(x), (model.L,) * model.d))


def covariance_ir(tau, x, model: LatticeModel, cutoff: CutoffFunction, Omega: float, omega_max=None, tol=1e-10):
    """Infrared part ``C_<(tau, x)`` of the covariance at scale ``Omega``."""
    split = scale_split(model, cutoff, Omega, omega_max, tol)
    return complex(split.ir(tau, [_site_index(model, x)])[..., 0])


def covariance_uv(tau, x, model: LatticeModel, cutoff: CutoffFunction, Omega: float, omega_max=None, tol=1e-10):
    """Ultraviolet part ``C_> = C - C_<``."""
    split = scale_split(model, cutoff, Omega, omega_max, tol)
    return complex(split.uv(tau, [_site_index(model, x)])[..., 0])


@dataclass(frozen=True)
class GramIRResult:
    Omega: float
    gamma_sq: float  # truncated sum plus tail bound: an upper estimate
    truncated: float
    tail_bound: float
    bound_rhs: float
    K_prime: float


def gram_ir_rhs(model: LatticeModel, cutoff: CutoffFunction, Omega: float) -> tuple[float, float]:
    """Explicit upper bound for ``gamma_<^2`` and the constant ``K'`` it uses."""
    beta = model.beta
    K_prime = 10 + 2 * cutoff.kappa * (1 / cutoff.alpha_exp + 1 / (beta * Omega))
    E = model.energies
    h = np.abs(model.h_values) / model.volume
    low = np.abs(E) <= 1
    log_term = np.sum(h[low] * np.log(1.0 / np.maximum(np.abs(E[low]), np.pi / beta)))
    return model.h_norm * (K_prime + 2 * np.log(Omega)) + log_term, K_prime


def gram_constant_ir(model: LatticeModel, cutoff: CutoffFunction, Omega: float, omega_max=None, tol=1e-10):
    """Squared standard Gram constant of ``C_<``: ``(1/beta) sum_w int chi_< |h| / |i w - E|``."""
    if cutoff.kind != "smooth_decay":
        raise DomainError("the Gram-constant bound is stated for algebraically decaying cutoffs")
    if not model.beta > np.pi:
        raise DomainError(f"the Gram-constant bound needs beta > pi, got beta={model.beta}")
    if Omega < 1:
        raise DomainError("Omega must be >= 1")
    if omega_max is None:
        omega_max = default_omega_max(cutoff, Omega, tol, model.beta)
    w = matsubara_frequencies(model.beta, omega_max)
    E = model.energies
    h = np.abs(model.h_values) / model.volume
    chi = cutoff(w / Omega)
    inv = 1.0 / np.abs(1j * w[:, None] - E[None, :])
    # fixed-order pairwise reduction keeps results reproducible
    truncated = float(np.sum(np.sum(chi[:, None] * inv * h[None, :], axis=1)) / model.beta)
    tail = ir_tail_bound(model.h_norm, cutoff, Omega, omega_max, model.beta)
    rhs, K_prime = gram_ir_rhs(model, cutoff, Omega)
    return GramIRResult(Omega, truncated + tail, truncated, tail, float(rhs), K_prime)


# ---------------------------------------------------------------- decay constants


def lattice_distance(model: LatticeModel) -> np.ndarray:
    """Minimal-image Euclidean length of every site vector."""
    s = model.sites
    s = np.minimum(s, model.L - s)
    return np.sqrt((s**2).sum(axis=1))


def _gl_nodes(breaks: np.ndarray, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def _graded_breaks(lo: float, hi: float, panels: int, finest: float, zone: float) -> np.ndarray:
    """Uniform panels on ``[lo, hi]`` plus equally many in a zone of width ``zone``
    at each end, refined geometrically down to ``finest`` at the endpoints."""
    zone = min(zone, (hi - lo) / 2)
    parts = [
        np.linspace(lo, hi, panels + 1),
        np.linspace(lo, lo + zone, panels + 1),
        np.linspace(hi - zone, hi, panels + 1),
    ]
    g = zone / panels / 2
    while g > finest:
        parts.append(np.array([lo + g, hi - g]))
        g /= 2
    return np.unique(np.concatenate(parts))


@dataclass(frozen=True)
class DecayConstant:
    k0: int
    k: int
    value: float
    kind: str
    panels: int
    converged: bool
    model: dict


def decay_constant(
    model: LatticeModel,
    kind: str = "full",
    k0: int = 0,
    k: int = 0,
    cutoff: CutoffFunction = STRICT_BUMP,
    Omega: float | None = None,
    rtol: float = 1e-6,
    atol: float = 1e-11,
    order: int = 8,
    min_panels: int = 16,
    max_panels: int = 1 << 14,
    chunk: int = 4096,
) -> DecayConstant:
    """``int_{-beta}^{beta} dtau sum_x |K(tau, x)| |tau|^k0 |x|^k`` for ``K`` in {full, uv, ir}.

    Composite Gauss-Legendre on ``[-beta, 0]`` and ``[0, beta]`` (the jump sits
    at the shared endpoint), panels doubled until the relative change drops
    below ``rtol``.
    """
    beta = model.beta
    if kind == "full":
        evaluate = lambda t: full_kernel_sites(t, model)  # noqa: E731
        scale = 1.0
    elif kind in ("uv", "ir"):
        if Omega is None:
            raise ValueError("UV/IR decay constants need Omega")
        split = scale_split(model, cutoff, Omega)
        evaluate = split.uv if kind == "uv" else split.ir
        scale = Omega
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    weight_x = lattice_distance(model) ** k
    finest = min(1e-3, 1e-3 / scale) * beta
    zone = 40.0 / scale

    def integrate(panels):
        total = 0.0
        for lo, hi in ((-beta, 0.0), (0.0, beta)):
            nodes, weights = _gl_nodes(_graded_breaks(lo, hi, panels, finest, zone), order)
            for start in range(0, len(nodes), chunk):
                t = nodes[start : start + chunk]
                vals = np.abs(evaluate(t)) @ weight_x
                total += float(np.sum(weights[start : start + chunk] * vals * np.abs(t) ** k0))
        return total

    panels = min_panels
    prev = integrate(panels)
    while panels < max_panels:
        panels *= 2
        cur = integrate(panels)
        if abs(cur - prev) <= rtol * abs(cur) + atol:
            return DecayConstant(k0, k, cur, kind, panels, True, model.describe())
        prev = cur
    raise RuntimeError(f"decay-constant quadrature did not reach rtol={rtol} with {max_panels} panels")


def closed_form_decay_constant_constant_energy(E0: float, beta: float) -> float:
    """``int_{-beta}^{beta} |bC(tau, E0)| dtau = 2 tanh(beta E0 / 2) / E0``."""
    return 2 * np.tanh(beta * E0 / 2) / E0


# ---------------------------------------------------------------- UV decay


def smoothing_kernel(tau, beta: float, cutoff: CutoffFunction, Omega: float):
    """``u(tau) = (1/(2 beta)) sum_{w in (pi/beta) Z} exp(-i w tau) chi_<(w/Omega)``.

    Normalized so that ``int_{-beta}^{beta} u = 1`` and ``u * C = C_<``.
    """
    if not np.isfinite(cutoff.support):
        raise DomainError("the smoothing kernel needs a compactly supported cutoff")
    kmax = int(np.ceil(cutoff.support * Omega * beta / np.pi))
    k = np.arange(1, kmax + 1)
    chi = cutoff(k * np.pi / (beta * Omega))
    tau = np.asarray(tau, dtype=float)
    return (cutoff(0.0) + 2 * np.cos(np.multiply.outer(tau, k * np.pi / beta)) @ chi) / (2 * beta)


def smoothing_kernel_primitive(a, b, beta: float, cutoff: CutoffFunction, Omega: float):
    """``int_a^b u(s) ds`` evaluated term by term."""
    kmax = int(np.ceil(cutoff.support * Omega * beta / np.pi))
    k = np.arange(1, kmax + 1)
    w = k * np.pi / beta
    chi = cutoff(w / Omega)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    osc = (np.sin(np.multiply.outer(b, w)) - np.sin(np.multiply.outer(a, w))) @ (chi / w)
    return (cutoff(0.0) * (b - a) + 2 * osc) / (2 * beta)


def calibrate_K(beta: float, cutoff: CutoffFunction, Omegas, samples: int = 40001) -> float:
    """Smallest ``K`` with ``|u(tau)| <= K Omega / (4 (1 + Omega |tau|)^3)`` on a dense grid."""
    K = 0.0
    tau = np.linspace(-beta, beta, samples)
    for Omega in Omegas:
        u = np.abs(smoothing_kernel(tau, beta, cutoff, Omega))
        K = max(K, float(np.max(4 * u * (1 + Omega * np.abs(tau)) ** 3 / Omega)))
    return K


def fourier_l1_norm(values: np.ndarray, model: LatticeModel) -> float:
    """``sum_x |L^-d sum_p values(p) exp(i p.x)|``."""
    coeffs = (values / model.volume) @ _phase_to_sites(model)
    return float(np.sum(np.abs(coeffs)))


def uv_decay_check(
    model: LatticeModel,
    Omegas,
    cutoff: CutoffFunction = STRICT_BUMP,
    rtol: float = 1e-6,
    ratio_window=(0.3, 0.7),
) -> dict:
    """Decay constants of ``C_>`` over an ``Omega`` sweep with the ``1/Omega`` checks.

    Reports each ``alpha``, consecutive ratios (asserted in ``ratio_window`` once
    ``Omega >= 4 ||E||_inf``), the calibrated cutoff constant ``K`` and the bound
    ``alpha <= 2 K ||g||_1 / Omega`` wherever ``K ||F||_1 < Omega / 4``.
    """
    if cutoff.kind != "strict_bump":
        raise DomainError("the UV decay bound is stated for a strict cutoff")
    Omegas = sorted(float(o) for o in Omegas)
    E_sup = float(np.max(np.abs(model.energies)))
    for Omega in Omegas:
        if Omega <= E_sup:
            raise DomainError(f"need Omega > ||E||_inf = {E_sup:g}, got Omega={Omega:g}")
    K = calibrate_K(model.beta, cutoff, Omegas)
    g_norm = fourier_l1_norm(model.h_values, model)
    F_norm = fourier_l1_norm(model.energies, model)
    rows = []
    for Omega in Omegas:
        alpha = decay_constant(model, "uv", cutoff=cutoff, Omega=Omega, rtol=rtol).value
        applies = K * F_norm < Omega / 4
        bound = 2 * K * g_norm / Omega
        rows.append(
            {
                "Omega": Omega,
                "alpha": alpha,
                "bound": bound,
                "bound_applies": bool(applies),
                "bound_holds": bool(alpha <= bound) if applies else None,
            }
        )
    ratios = []
    for lo, hi in zip(rows, rows[1:]):
        if hi["Omega"] != 2 * lo["Omega"]:
            continue
        r = hi["alpha"] / lo["alpha"]
        checked = lo["Omega"] >= 4 * E_sup
        ratios.append(
            {
                "Omega": lo["Omega"],
                "ratio": r,
                "checked": checked,
                "pass": bool(ratio_window[0] <= r <= ratio_window[1]) if checked else None,
            }
        )
    passed = all(r["pass"] is not False for r in ratios) and all(row["bound_holds"] is not False for row in rows)
    return {
        "K": K,
        "g_norm": g_norm,
        "F_norm": F_norm,
        "E_sup": E_sup,
        "rows": rows,
        "ratios": ratios,
        "pass": passed,
    }


def fit_slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, dtype=float), np.asarray(y, dtype=float), 1)[0])


def sector_scaling_probe(
    model_config: dict,
    eps_values=(0.4, 0.2, 0.1, 0.05),
    min_momenta: int = 4,
    rtol: float = 1e-6,
) -> dict:
    """Decay constants of shell-restricted covariances ``h = f(E/eps)`` over an ``eps`` sweep.

    Shells resolved by fewer than ``min_momenta`` lattice momenta are refused
    and listed; the slope of ``log alpha`` against ``log eps`` is fitted over
    the rest and checked against ``-(d + 1)/2 - 0.5``.
    """
    rows = []
    d = int(model_config.get("d", 1))
    for eps in eps_values:
        cfg = dict(model_config, h="shell", h_params={"eps": eps})
        model = LatticeModel.from_config(cfg)
        support = int(np.count_nonzero(model.h_values > 0))
        if support == 0:
            rows.append({"eps": eps, "alpha": 0.0, "support": 0, "refused": False})
            continue
        if support < min_momenta:
            rows.append({"eps": eps, "alpha": None, "support": support, "refused": True})
            continue
        alpha = decay_constant(model, "full", rtol=rtol).value
        rows.append({"eps": eps, "alpha": alpha, "support": support, "refused": False})
    used = [r for r in rows if not r["refused"] and r["alpha"] > 0]
    slope = fit_slope(np.log([r["eps"] for r in used]), np.log([r["alpha"] for r in used])) if len(used) >= 2 else None
    floor = -(d + 1) / 2 - 0.5
    return {
        "rows": rows,
        "slope": slope,
        "slope_floor": floor,
        "pass": slope is None or slope >= floor,
    }
