"""Free fermionic covariances on a finite-volume lattice torus.

The canonical model is the discrete torus of side ``L`` in ``d`` dimensions
with momenta ``p = 2*pi*k/L`` and the normalized counting measure ``L**-d``.
Imaginary times live on ``[0, beta)``; the time-difference kernel is the
2*beta-periodic, beta-antiperiodic function returned by
:func:`bare_covariance`.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit

#: Dispersions by name. Each factory takes keyword parameters and returns ``E(p)``
#: acting on momenta of shape ``(..., d)``.
DISPERSIONS: dict[str, Callable] = {
    "tight_binding": lambda mu=0.3, t=1.0: (lambda p: t * np.cos(p).sum(axis=-1) - mu),
    "constant": lambda E0=1.0: (lambda p: np.full(p.shape[:-1], float(E0))),
    "zero": lambda: (lambda p: np.zeros(p.shape[:-1])),
}

#: Scaling functions ``h(p) >= 0`` by name; ``shell`` needs the dispersion and
#: is resolved in :meth:`LatticeModel.from_config`.
SCALINGS: dict[str, Callable] = {
    "one": lambda: (lambda p: np.ones(p.shape[:-1])),
    "constant": lambda c=1.0: (lambda p: np.full(p.shape[:-1], float(c))),
}

ZERO_DISPERSION_CUTOFF = 1e-6


class DomainError(ValueError):
    """A hypothesis of the requested construction is violated."""


@dataclass(frozen=True)
class LatticeModel:
    """Single-band free fermions on the torus ``(Z/L)^d`` at inverse temperature ``beta``."""

    d: int
    L: int
    beta: float
    dispersion: Callable = field(repr=False)
    scaling_h: Callable = field(repr=False, default=SCALINGS["one"]())
    epsilon_reg: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise DomainError("need d >= 1 and L >= 1")
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if self.epsilon_reg < 0:
            raise DomainError("epsilon_reg must be nonnegative")

    @property
    def volume(self) -> int:
        return self.L**self.d

    @property
    def momenta(self) -> np.ndarray:
        """All torus momenta, shape ``(L**d, d)``."""
        grid = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return 2 * np.pi * grid / self.L

    @property
    def sites(self) -> np.ndarray:
        return np.indices((self.L,) * self.d).reshape(self.d, -1).T

    @property
    def raw_energies(self) -> np.ndarray:
        return np.asarray(self.dispersion(self.momenta), dtype=float)

    @property
    def energies(self) -> np.ndarray:
        """Dispersion with the ``E_eps`` regularization applied when ``epsilon_reg > 0``."""
        E = self.raw_energies
        if self.epsilon_reg > 0:
            E = np.where(np.abs(E) <= self.epsilon_reg / 2, self.epsilon_reg / 2, E)
        return E

    @property
    def h_values(self) -> np.ndarray:
        return np.asarray(self.scaling_h(self.momenta), dtype=float)

    @property
    def h_norm(self) -> float:
        return float(np.abs(self.h_values).sum() / self.volume)

    @property
    def regularized(self) -> bool:
        return self.epsilon_reg > 0 and bool(np.any(np.abs(self.raw_energies) <= self.epsilon_reg / 2))

    def with_regularization(self) -> "LatticeModel":
        """Copy with ``epsilon_reg`` set to the default when a zero energy is present."""
        if self.epsilon_reg > 0 or not np.any(np.abs(self.raw_energies) < ZERO_DISPERSION_CUTOFF):
            return self
        return self.replace(epsilon_reg=ZERO_DISPERSION_CUTOFF)

    def replace(self, **changes) -> "LatticeModel":
        from dataclasses import replace

        return replace(self, **changes)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "L": self.L,
            "beta": self.beta,
            "epsilon_reg": self.epsilon_reg,
            "regularized": self.regularized,
            **self.params,
        }

    @classmethod
    def from_config(cls, config: dict) -> "LatticeModel":
        """Build a model from a key-value mapping.

        Keys: ``d``, ``L``, ``beta``, ``dispersion`` (name), ``dispersion_params``,
        ``h`` (name), ``h_params``, ``epsilon_reg``.
        """
        try:
            d = int(config.get("d", 1))
            L = int(config["L"])
            beta = float(config["beta"])
        except KeyError as exc:
            raise DomainError(f"model config misses key {exc}") from None
        disp_name = config.get("dispersion", "tight_binding")
        if disp_name not in DISPERSIONS:
            raise DomainError(f"unknown dispersion {disp_name!r}")
        disp_params = dict(config.get("dispersion_params", {}))
        dispersion = DISPERSIONS[disp_name](**disp_params)
        h_name = config.get("h", "one")
        h_params = dict(config.get("h_params", {}))
        if h_name == "shell":
            scaling = shell_scaling(dispersion, **h_params)
        elif h_name in SCALINGS:
            scaling = SCALINGS[h_name](**h_params)
        else:
            raise DomainError(f"unknown scaling function {h_name!r}")
        return cls(
            d=d,
            L=L,
            beta=beta,
            dispersion=dispersion,
            scaling_h=scaling,
            epsilon_reg=float(config.get("epsilon_reg", 0.0)),
            name=config.get("name", disp_name),
            params={
                "dispersion": disp_name,
                "dispersion_params": disp_params,
                "h": h_name,
                "h_params": h_params,
            },
        )


def load_model_config(path) -> LatticeModel:
    with open(path) as fh:
        return LatticeModel.from_config(json.load(fh))


def metal1d(L: int = 8, beta: float = 2.0, mu: float = 0.3, **kw) -> LatticeModel:
    return LatticeModel.from_config(
        {"d": 1, "L": L, "beta": beta, "dispersion_params": {"mu": mu}, "name": "metal1d", **kw}
    )


def insulator1d(L: int = 8, beta: float = 2.0, mu: float = 2.5, **kw) -> LatticeModel:
    return LatticeModel.from_config(
        {"d": 1, "L": L, "beta": beta, "dispersion_params": {"mu": mu}, "name": "insulator1d", **kw}
    )


def metal2d(L: int = 6, beta: float = 2.0, mu: float = 0.3, **kw) -> LatticeModel:
    return LatticeModel.from_config(
        {"d": 2, "L": L, "beta": beta, "dispersion_params": {"mu": mu}, "name": "metal2d", **kw}
    )


MODELS = {"metal1d": metal1d, "insulator1d": insulator1d, "metal2d": metal2d}


def plateau_bump(x, lo: float = 1.0, hi: float = 2.0, ramp: float = 0.25):
    """Smooth ``f >= 0`` supported in ``lo <= |x| <= hi``, equal to 1 on the inner plateau."""
    ax = np.abs(np.asarray(x, dtype=float))
    up = _smooth_step((ax - lo) / ramp)
    down = _smooth_step((hi - ax) / ramp)
    return up * down


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    a = _psi(t)
    return a / (a + _psi(1.0 - t))


def shell_scaling(dispersion: Callable, eps: float, **bump) -> Callable:
    """``h(p) = f(E(p)/eps)`` with ``f`` the plateau bump on ``1 <= |x| <= 2``."""
    return lambda p: plateau_bump(dispersion(p) / eps, **bump)


class SpaceTimePoint(NamedTuple):
    tau: float
    x: tuple


def fermi_function(E, beta):
    """``1/(1 + exp(beta*E))``, overflow-safe."""
    if not np.all(np.asarray(beta) > 0):
        raise DomainError("beta must be positive")
    return expit(-np.multiply(beta, E))


def reduce_time(tau, beta):
    """Map ``tau`` into ``(-beta, beta]`` modulo ``2*beta``."""
    tau = np.asarray(tau, dtype=float)
    # values already in range are kept exactly; tiny positive tau must not round to 0
    inside = (tau > -beta) & (tau <= beta)
    return np.where(inside, tau, beta - np.mod(beta - tau, 2 * beta))


def bare_covariance(tau, E, beta):
    """The 2*beta-periodic time kernel ``bC(tau, E)``.

    ``-exp(-tau E) f(-E)`` for ``0 < tau <= beta`` and ``exp(-tau E) f(E)`` for
    ``-beta < tau <= 0``, evaluated with nonpositive exponents only.
    """
    tau = reduce_time(tau, beta)
    E = np.asarray(E, dtype=float)
    tau, E = np.broadcast_arrays(tau, E)
    pos_t = tau > 0
    pos_e = E > 0
    expo = np.where(
        pos_t,
        np.where(pos_e, -tau * E, (beta - tau) * E),
        np.where(pos_e, -(beta + tau) * E, -tau * E),
    )
    occ = np.where(pos_e, fermi_function(-E, beta), fermi_function(E, beta))
    value = np.exp(expo) * occ
    out = np.where(pos_t, -value, value)
    return out if out.ndim else float(out)


def fkt_limit_covariance(tau):
    """Zero-temperature kernel at unit energy, ``-exp(-tau) 1[tau > 0]``."""
    tau = np.asarray(tau, dtype=float)
    out = np.where(tau > 0, -np.exp(-np.where(tau > 0, tau, 0.0)), 0.0)
    return out if out.ndim else float(out)


def covariance_kernel(tau, dx, model: LatticeModel):
    """``C(tau, dx) = L^-d sum_p h(p) exp(i p.dx) bC(tau, E(p))``.

    ``tau`` has shape ``S`` and ``dx`` shape ``S + (d,)``; result has shape ``S``.
    """
    tau = np.asarray(tau, dtype=float)
    dx = np.asarray(dx, dtype=float).reshape(tau.shape + (model.d,))
    p = model.momenta
    weights = model.h_values / model.volume
    phases = np.exp(1j * dx @ p.T)
    bc = bare_covariance(tau[..., None], model.energies, model.beta)
    return np.einsum("...p,...p,p->...", phases, bc, weights)


def covariance_position(x: SpaceTimePoint, y: SpaceTimePoint, model: LatticeModel) -> complex:
    """Matrix element ``C_{x,y}`` between two space-time points."""
    dx = np.subtract(x.x, y.x, dtype=float)
    return complex(covariance_kernel(x.tau - y.tau, dx, model))


def covariance_matrix(taus_x, xs_x, taus_y, xs_y, model: LatticeModel) -> np.ndarray:
    """``C_{x_i, y_j}`` for batches of points; leading batch axes are broadcast.

    ``taus_*`` have shape ``(..., n)`` and ``xs_*`` shape ``(..., n, d)``.
    """
    taus_x = np.asarray(taus_x, dtype=float)
    taus_y = np.asarray(taus_y, dtype=float)
    xs_x = np.asarray(xs_x, dtype=float).reshape(taus_x.shape + (model.d,))
    xs_y = np.asarray(xs_y, dtype=float).reshape(taus_y.shape + (model.d,))
    tau = taus_x[..., :, None] - taus_y[..., None, :]
    dx = xs_x[..., :, None, :] - xs_y[..., None, :, :]
    return covariance_kernel(tau, dx, model)


def matsubara_frequencies(beta: float, omega_max: float) -> np.ndarray:
    """Fermionic frequencies ``(2k+1) pi/beta`` with ``|omega| <= omega_max``."""
    kmax = int(np.floor((omega_max * beta / np.pi - 1) / 2 + 1e-12))
    if kmax < 0:
        return np.zeros(0)
    k = np.arange(-kmax - 1, kmax + 1)
    return (2 * k + 1) * np.pi / beta


def matsubara_covariance(tau: float, E: float, beta: float, omega_max: float) -> complex:
    """Symmetric partial Matsubara sum ``(1/beta) sum e^{-i w tau}/(i w - E)``."""
    if omega_max <= 0:
        raise DomainError("omega_max must be positive")
    if np.isclose(np.mod(tau, beta), 0.0, atol=1e-12) or np.isclose(np.mod(tau, beta), beta, atol=1e-12):
        raise DomainError("tau lies on a discontinuity of the covariance (tau = 0 mod beta)")
    w = matsubara_frequencies(beta, omega_max)
    return complex(np.sum(np.exp(-1j * w * tau) / (1j * w - E)) / beta)


def phi_kernel(s, eps: float, beta: float):
    """``pi^{-1/2} sqrt(eps f(-eps)) / (i s - eps)``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    s = np.asarray(s, dtype=float)
    return np.sqrt(eps * fermi_function(-eps, beta) / np.pi) / (1j * s - eps)


def phi_fourier_closed_form(tau, eps: float, beta: float):
    """``int ds e^{i s tau} |phi(s, eps)|^2 = exp(-eps |tau|) f(-eps)``."""
    return np.exp(-eps * np.abs(tau)) * fermi_function(-eps, beta)


class GramVector(NamedTuple):
    """One of the vectors ``g+``, ``g-`` or ``h`` at time ``t`` (any real) and site ``x``."""

    kind: str
    t: float
    x: tuple


_TIME_SIGN = {"g+": 1, "g-": 1, "h": -1}


def _sector(kind: str, E: np.ndarray) -> np.ndarray:
    return E > 0 if kind == "g+" else E < 0


def _check_gram_model(model: LatticeModel):
    if np.any(model.energies == 0):
        raise DomainError("Gram vectors need E(p) != 0 on the torus; set epsilon_reg > 0")


def gram_inner_product(a: GramVector, b: GramVector, model: LatticeModel) -> complex:
    """Scalar product in ``L^2(R x torus)`` of two Gram vectors.

    The ``s``-integral is done in closed form, ``exp(-|E| |dt|) f(-|E|)``.
    """
    _check_gram_model(model)
    E = model.energies
    support = _sector(a.kind, E) & _sector(b.kind, E)
    dt = _TIME_SIGN[a.kind] * a.t - _TIME_SIGN[b.kind] * b.t
    absE = np.abs(E)
    weights = model.h_values * support / model.volume
    dx = np.subtract(a.x, b.x, dtype=float)
    phase = np.exp(1j * model.momenta @ dx)
    return complex(np.sum(weights * phase * phi_fourier_closed_form(dt, absE, model.beta)))


def gram_norm_sq(kind: str, model: LatticeModel) -> float:
    """``||g||^2`` of a Gram vector of the given kind (independent of t and x)."""
    v = GramVector(kind, 0.0, (0,) * model.d)
    return gram_inner_product(v, v, model).real


def gram_assembly(t: float, x, t_prime: float, x_prime, model: LatticeModel) -> complex:
    """Covariance entry assembled from Gram vectors with time-ordering indicators."""
    x, x_prime = tuple(np.atleast_1d(x)), tuple(np.atleast_1d(x_prime))
    beta = model.beta
    if t > t_prime:
        # <-g+_t - g-_{beta-t}, g+_t' + h_t'>
        left = [(-1.0, GramVector("g+", t, x)), (-1.0, GramVector("g-", beta - t, x))]
        right = [(1.0, GramVector("g+", t_prime, x_prime)), (1.0, GramVector("h", t_prime, x_prime))]
    else:
        # <g+_t + h_t, g+_{t'-beta} + h_t'>
        left = [(1.0, GramVector("g+", t, x)), (1.0, GramVector("h", t, x))]
        right = [(1.0, GramVector("g+", t_prime - beta, x_prime)), (1.0, GramVector("h", t_prime, x_prime))]
    return sum(ca * cb * gram_inner_product(a, b, model) for ca, a in left for cb, b in right)


def sup_covariance_witness(model: LatticeModel) -> float:
    """``max(rho_+, rho_-)``: ``|C|`` at equal sites for ``t' = t`` and ``t' -> t`` from below."""
    occ = fermi_function(model.energies, model.beta)
    h = model.h_values / model.volume
    rho_plus = float(np.sum(occ * h))
    rho_minus = float(np.sum((1 - occ) * h))
    return max(rho_plus, rho_minus)


def export_covariance_csv(path, model: LatticeModel, taus, displacements) -> None:
    """Write ``C(tau, dx)`` as CSV with columns ``tau, x0.., re, im`` (atomic replace)."""
    rows = []
    for tau in taus:
        for dx in displacements:
            dx = tuple(np.atleast_1d(dx))
            c = complex(covariance_kernel(tau, dx, model))
            rows.append([repr(float(tau)), *[str(int(v)) for v in dx], repr(c.real), repr(c.imag)])
    header = ["tau", *[f"x{i}" for i in range(model.d)], "re", "im"]
    directory = os.path.dirname(os.path.abspath(path))
    with tempfile.NamedTemporaryFile("w", dir=directory, delete=False, newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        tmp = fh.name
    os.replace(tmp, path)
