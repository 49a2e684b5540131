import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from fermidet.covariance import DomainError, LatticeModel, SpaceTimePoint, covariance_position, insulator1d, metal1d
from fermidet.scales import (
    SMOOTH_DECAY,
    STRICT_BUMP,
    CutoffFunction,
    calibrate_K,
    closed_form_decay_constant_constant_energy,
    covariance_ir,
    covariance_uv,
    decay_constant,
    fourier_l1_norm,
    gram_constant_ir,
    gram_ir_rhs,
    scale_split,
    sector_scaling_probe,
    smoothing_kernel,
    smoothing_kernel_primitive,
    uv_decay_check,
)


def model_E(E0, beta=4.0, L=8):
    return LatticeModel.from_config({"d": 1, "L": L, "beta": beta, "dispersion": "constant", "dispersion_params": {"E0": E0}})


def zero_E(beta=4.0, L=4):
    return LatticeModel.from_config({"d": 1, "L": L, "beta": beta, "dispersion": "zero"})


# -- cutoffs


@pytest.mark.parametrize("cutoff", [SMOOTH_DECAY, STRICT_BUMP])
def test_cutoff_partition(cutoff):
    x = np.linspace(-5, 5, 1001)
    assert cutoff(0.0) == 1.0
    assert np.allclose(cutoff(x) + cutoff.greater(x), 1.0)
    assert np.all((cutoff(x) >= 0) & (cutoff(x) <= 1))


def test_smooth_decay_tail():
    x = np.linspace(1, 100, 500)
    assert np.all(SMOOTH_DECAY(x) <= SMOOTH_DECAY.kappa * x ** -SMOOTH_DECAY.alpha_exp)


def test_strict_bump_support():
    assert np.all(STRICT_BUMP(np.linspace(-1, 1, 101)) == 1.0)
    assert np.all(STRICT_BUMP(np.array([2.0, -2.0, 3.5])) == 0.0)
    mid = STRICT_BUMP(np.linspace(1.01, 1.99, 50))
    assert np.all(np.diff(mid) < 0)


def test_unknown_cutoff():
    with pytest.raises(ValueError):
        CutoffFunction("box")(0.5)


# -- split


def test_ir_plus_uv_is_full():
    m = metal1d(beta=4.0)
    split = scale_split(m, STRICT_BUMP, 8.0)
    t = np.linspace(-4, 4, 33)
    assert np.max(np.abs(split.ir(t) + split.uv(t) - split.full(t))) <= 1e-12


def test_ir_matches_full_away_from_jump_for_large_omega():
    m = metal1d(beta=2.0)
    for tau in (0.5, 1.0, -0.7):
        full = covariance_position(SpaceTimePoint(tau, (1,)), SpaceTimePoint(0.0, (0,)), m)
        ir = covariance_ir(tau, 1, m, STRICT_BUMP, 400.0)
        assert abs(ir - full) < 5e-3


def test_ir_antiperiodic_and_continuous():
    m = metal1d(beta=4.0)
    split = scale_split(m, SMOOTH_DECAY, 4.0)
    t = np.linspace(-3.9, 0.0, 9)
    assert np.max(np.abs(split.ir(t + 4.0) + split.ir(t))) <= 1e-12
    assert np.max(np.abs(split.ir(1e-9) - split.ir(-1e-9))) < 1e-6


def test_uv_carries_the_jump():
    m = metal1d(beta=4.0)
    split = scale_split(m, STRICT_BUMP, 8.0)
    jump_uv = split.uv(1e-12) - split.uv(0.0)
    jump_full = split.full(1e-12) - split.full(0.0)
    assert np.max(np.abs(jump_uv - jump_full)) < 1e-6
    assert abs(jump_full[0] + 1.0) < 1e-9  # jump of -1 at equal sites


def test_uv_vanishes_for_large_omega():
    m = metal1d(beta=4.0)
    vals = [abs(covariance_uv(0.9, 0, m, STRICT_BUMP, O)) for O in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.1 * vals[0]


def test_split_refuses_small_omega_and_short_sum():
    m = metal1d(beta=4.0)
    with pytest.raises(DomainError):
        scale_split(m, STRICT_BUMP, 0.5)
    with pytest.raises(DomainError):
        scale_split(m, SMOOTH_DECAY, 16.0, omega_max=20.0)


# -- Gram constant


def test_gram_constant_matches_extended_precision():
    m = metal1d(beta=4.0)
    res = gram_constant_ir(m, SMOOTH_DECAY, 16.0, omega_max=16.0 * 200)
    mpmath.mp.dps = 30
    beta = mpmath.mpf(4)
    total = mpmath.mpf(0)
    kmax = int((16.0 * 200 * 4 / math.pi - 1) // 2)
    Es = [mpmath.cos(2 * mpmath.pi * j / 8) - mpmath.mpf("0.3") for j in range(8)]
    for k in range(-kmax - 1, kmax + 1):
        w = (2 * k + 1) * mpmath.pi / beta
        chi = 1 / (1 + (w / 16) ** 4)
        total += chi * sum(1 / mpmath.sqrt(w**2 + E**2) for E in Es) / 8
    assert res.truncated == pytest.approx(float(total / beta), rel=1e-10)


def test_gram_constant_bounded_and_log_growth():
    m = metal1d(beta=4.0)
    rows = [gram_constant_ir(m, SMOOTH_DECAY, O) for O in (4, 16, 64, 256)]
    for r in rows:
        assert r.gamma_sq <= r.bound_rhs
        assert r.K_prime == pytest.approx(10 + 2 * (0.25 + 1 / (4.0 * r.Omega)))
    slope = np.polyfit(np.log([r.Omega for r in rows]), [r.gamma_sq for r in rows], 1)[0]
    assert slope <= 2 * m.h_norm * 1.2


def test_gram_constant_insulator_log_term_empty():
    m = insulator1d(beta=4.0, mu=2.5)
    rhs, Kp = gram_ir_rhs(m, SMOOTH_DECAY, 16.0)
    assert rhs == pytest.approx(m.h_norm * (Kp + 2 * math.log(16.0)))


def test_gram_constant_hypotheses():
    with pytest.raises(DomainError):
        gram_constant_ir(metal1d(beta=2.0), SMOOTH_DECAY, 16.0)
    with pytest.raises(DomainError):
        gram_constant_ir(metal1d(beta=4.0), STRICT_BUMP, 16.0)


# -- decay constants


@pytest.mark.parametrize("E0,beta", [(1.0, 4.0), (0.5, 8.0), (-0.7, 3.0)])
def test_decay_constant_constant_energy_closed_form(E0, beta):
    m = model_E(E0, beta)
    val = decay_constant(m).value
    assert val == pytest.approx(closed_form_decay_constant_constant_energy(abs(E0), beta), rel=1e-6)


def test_decay_constant_weights():
    m = model_E(1.0, 2.0)
    # C is supported at x = 0, so any spatial weight k >= 1 kills it
    assert decay_constant(m, k=1).value < 1e-12
    # time weight: int |tau| |bC| has the closed form 2 f(-1)... computed here by quad
    ref = quad(lambda t: abs(t) * np.exp(-t) / (1 + np.exp(-2.0)), 0, 2)[0] + quad(
        lambda t: abs(t) * np.exp(-t) / (1 + np.exp(2.0)), -2, 0
    )[0]
    assert decay_constant(m, k0=1).value == pytest.approx(ref, rel=1e-6)


def test_decay_scaling_metal_and_insulator():
    betas = [4.0, 8.0, 16.0, 32.0]
    metal = [decay_constant(metal1d(beta=b)).value for b in betas]
    assert np.polyfit(np.log(betas), np.log(metal), 1)[0] <= 2.2
    ins = [decay_constant(insulator1d(beta=b)).value for b in (4.0, 32.0)]
    assert ins[1] / ins[0] <= 1.5


# -- UV decay


def test_smoothing_kernel_normalization_and_primitive():
    beta, Omega = 4.0, 8.0
    assert smoothing_kernel_primitive(-beta, beta, beta, STRICT_BUMP, Omega) == pytest.approx(1.0)
    num = quad(lambda s: smoothing_kernel(s, beta, STRICT_BUMP, Omega), 0.1, 0.9, limit=200)[0]
    assert smoothing_kernel_primitive(0.1, 0.9, beta, STRICT_BUMP, Omega) == pytest.approx(num, rel=1e-8)


def test_calibrated_K_bounds_kernel():
    beta = 4.0
    Omegas = [8.0, 16.0]
    K = calibrate_K(beta, STRICT_BUMP, Omegas)
    tau = np.random.default_rng(0).uniform(-beta, beta, 2000)
    for O in Omegas:
        u = np.abs(smoothing_kernel(tau, beta, STRICT_BUMP, O))
        assert np.all(u <= K * O / (4 * (1 + O * np.abs(tau)) ** 3) * (1 + 1e-6))


def test_fourier_l1_norms():
    m = metal1d(beta=4.0)
    assert fourier_l1_norm(m.h_values, m) == pytest.approx(1.0)
    assert fourier_l1_norm(m.energies, m) == pytest.approx(1.3)


def test_uv_decay_zero_dispersion_oracle():
    beta, Omega = 4.0, 8.0
    m = zero_E(beta)
    alpha = decay_constant(m, "uv", cutoff=STRICT_BUMP, Omega=Omega).value

    def a_minus_ua(t):
        a = 0.5 if t <= 0 else -0.5
        ua = 0.5 * smoothing_kernel_primitive(t, t + beta, beta, STRICT_BUMP, Omega) - 0.5 * smoothing_kernel_primitive(
            t - beta, t, beta, STRICT_BUMP, Omega
        )
        return abs(a - ua)

    ref = sum(quad(a_minus_ua, lo, hi, limit=400, epsabs=1e-12)[0] for lo, hi in ((-beta, 0), (0, beta)))
    assert alpha == pytest.approx(ref, rel=1e-5)


def test_uv_decay_check_small_sweep():
    res = uv_decay_check(metal1d(beta=4.0), [8, 16, 32])
    assert res["pass"]
    assert all(0.3 <= r["ratio"] <= 0.7 for r in res["ratios"])
    with pytest.raises(DomainError):
        uv_decay_check(metal1d(beta=4.0), [1.0])
    with pytest.raises(DomainError):
        uv_decay_check(metal1d(beta=4.0), [8.0], SMOOTH_DECAY)


# -- sector probe


def test_sector_probe_refuses_thin_shell_and_handles_empty():
    base = {"d": 1, "L": 64, "beta": 16.0, "dispersion_params": {"mu": 0.3}}
    res = sector_scaling_probe(base, (0.2, 0.05))
    refused = {r["eps"]: r["refused"] for r in res["rows"]}
    assert refused == {0.2: False, 0.05: True}
    gap = {"d": 1, "L": 16, "beta": 4.0, "dispersion_params": {"mu": 2.5}}
    empty = sector_scaling_probe(gap, (0.1,))
    assert empty["rows"][0]["alpha"] == 0.0
