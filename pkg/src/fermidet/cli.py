"""``verify``: run verification suites and write deterministic reports.

Exit codes: 0 when every assertion passes, 1 on an assertion failure, 2 on a
configuration or domain error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .covariance import (
    MODELS,
    DomainError,
    LatticeModel,
    bare_covariance,
    covariance_matrix,
    fkt_limit_covariance,
    gram_assembly,
    covariance_position,
    SpaceTimePoint,
    load_model_config,
    matsubara_covariance,
)
from .detbound import (
    CovarianceMatrixSpec,
    binomial_square_check,
    diagonal_witness,
    fermion_gram_pieces,
    laplace_sum_check,
    masked_gram_det_trial,
    run_bound_suite,
)
from .effaction import (
    Interaction,
    decay_bound_matrix,
    in_domain_lambdas,
    taylor_remainder_check,
    quartic_vertex,
    semigroup_defect,
)
from .grassmann import Multivector, car_defect, chrono_masked_det, contract_apply, wedge_apply
from .scales import (
    SMOOTH_DECAY,
    STRICT_BUMP,
    decay_constant,
    fit_slope,
    gram_constant_ir,
    scale_split,
    sector_scaling_probe,
    uv_decay_check,
)

log = logging.getLogger("fermidet")

SUITES = (
    "car",
    "chrono-det",
    "det-bound",
    "covariance",
    "gram-rep",
    "uv-split",
    "gram-ir",
    "decay",
    "sector",
    "effective-action",
)

DEFAULTS = {
    "model": "metal1d",
    "L": None,
    "beta": None,
    "trials": 10_000,
    "seed": 0,
    "threads": 1,
    "format": "json",
    "out": None,
    "n_max": 6,
    "omegas_uv": [8, 16, 32, 64, 256],
    "omegas_ir": [4, 16, 64, 256],
    "betas_decay": [4, 8, 16, 32],
    "eps_sector": [0.4, 0.2, 0.1, 0.05],
    "sector_L": 64,
    "lambda_count": 5,
    "P_values": [1, 2],
}


class ConfigError(ValueError):
    pass


def check(name: str, observed: float, bound: float, relation: str = "le", slack: float = 1e-9) -> dict:
    """One assertion row; ``relation`` is ``le`` (observed <= bound) or ``ge``."""
    if relation == "le":
        ok = observed <= bound * (1 + slack) if bound >= 0 else observed <= bound * (1 - slack)
        margin = bound - observed
    elif relation == "ge":
        ok = observed >= bound
        margin = observed - bound
    else:
        raise ValueError(relation)
    return {"name": name, "observed": float(observed), "bound": float(bound), "relation": relation, "margin": float(margin), "pass": bool(ok)}


def in_range(name: str, observed: float, lo: float, hi: float) -> dict:
    return {"name": name, "observed": float(observed), "bound": [lo, hi], "relation": "in", "margin": float(min(observed - lo, hi - observed)), "pass": bool(lo <= observed <= hi)}


def _rng(cfg, *stream):
    return np.random.default_rng([int(cfg["seed"]), *stream])


def build_model(cfg) -> LatticeModel:
    name = cfg["model"]
    if isinstance(name, dict):
        model = LatticeModel.from_config(name)
    elif name in MODELS:
        model = MODELS[name]()
    elif os.path.exists(str(name)):
        model = load_model_config(name)
    else:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)} or give a JSON file")
    changes = {k: cfg[k] for k in ("L", "beta") if cfg.get(k) is not None}
    return model.replace(**changes) if changes else model


# ---------------------------------------------------------------- suites


def suite_car(cfg) -> dict:
    rng = _rng(cfg, 1)
    worst = {"anticommutator": 0.0, "wedge_square": 0.0, "contract_square": 0.0}
    for _ in range(1000):
        N = int(rng.integers(1, 7))
        m = Multivector.random(N, rng)
        a, b = (rng.normal(size=(2, N)) + 1j * rng.normal(size=(2, N)))
        u, v = (rng.normal(size=(2, N)) + 1j * rng.normal(size=(2, N)))
        scale = (np.linalg.norm(a) + np.linalg.norm(b)) * (np.linalg.norm(u) + np.linalg.norm(v)) * m.norm() + m.norm()
        worst["anticommutator"] = max(worst["anticommutator"], car_defect(a, u, m) / scale)
        ww = wedge_apply(a, wedge_apply(b, m)) + wedge_apply(b, wedge_apply(a, m))
        cc = contract_apply(u, contract_apply(v, m)) + contract_apply(v, contract_apply(u, m))
        worst["wedge_square"] = max(worst["wedge_square"], ww.norm() / scale)
        worst["contract_square"] = max(worst["contract_square"], cc.norm() / scale)
    return {"instances": 1000, "assertions": [check(f"car_{k}", v, 1e-12) for k, v in sorted(worst.items())]}


def suite_chrono_det(cfg) -> dict:
    rng = _rng(cfg, 2)
    worst = 0.0
    ties = 0
    for i in range(1000):
        N = int(rng.integers(1, 9))
        n = int(rng.integers(1, min(5, N) + 1))
        strict = bool(i % 2)
        alphas = rng.normal(size=(n, N)) + 1j * rng.normal(size=(n, N))
        vs = rng.normal(size=(n, N)) + 1j * rng.normal(size=(n, N))
        rows = rng.integers(0, 3, n).astype(float)
        cols = rng.integers(0, 3, n).astype(float)
        ties += len(set(rows) & set(cols)) > 0 or len(set(rows)) < n or len(set(cols)) < n
        mask = rows[:, None] > cols[None, :] if strict else rows[:, None] >= cols[None, :]
        M = (alphas @ vs.T) * mask
        ref = np.linalg.det(M)
        got = chrono_masked_det(list(alphas), list(vs), list(rows), list(cols), strict)
        scale = np.prod(np.linalg.norm(alphas, axis=1) * np.linalg.norm(vs, axis=1))
        worst = max(worst, abs(got - ref) / scale)
    return {"instances": 1000, "tied_instances": int(ties), "assertions": [check("chrono_det_vs_lu_relative", worst, 1e-10)]}


def suite_det_bound(cfg) -> dict:
    model = build_model(cfg)
    trials = int(cfg["trials"])
    n_values = list(range(1, int(cfg["n_max"]) + 1))
    seed = int(cfg["seed"])
    workers = int(cfg.get("threads") or 1)
    reports = {}
    for label, spec, mode in (
        ("fermion_full", CovarianceMatrixSpec("fermion_full", model=model), "masked"),
        ("fermion_full_interp", CovarianceMatrixSpec("fermion_full", model=model), "interp"),
        ("step_u", CovarianceMatrixSpec("step_u"), "masked"),
    ):
        reports[label] = run_bound_suite(spec, n_values, trials, seed, mode, workers=workers).to_dict()
    asserts = [check(f"{k}_observed_le_bound", r["observed"], r["bound"]) for k, r in reports.items()]

    rng = _rng(cfg, 3)
    witness = diagonal_witness(model)
    asserts.append(check("fermion_full_witness_ge_lower_bound", witness, math.sqrt(model.h_norm) / math.sqrt(2) - 1e-6, "ge"))

    # Gram-piece assembly of the covariance on a finite point set
    reg = model if model.regularized else model.with_regularization()
    m_pts = 8
    taus = rng.uniform(0, model.beta, m_pts)
    taus[1] = taus[0]
    xs = rng.integers(0, model.L, (m_pts, model.d))
    pieces = fermion_gram_pieces(reg, list(zip(taus, xs)))
    assembled = sum(p.matrix(np.arange(m_pts), np.arange(m_pts)) for p in pieces)
    direct = covariance_matrix(taus, xs, taus, xs, reg)
    asserts.append(check("gram_pieces_reproduce_covariance", float(np.max(np.abs(assembled - direct))), 1e-12))
    gs = run_bound_suite(CovarianceMatrixSpec("gram_sum", pieces=pieces), n_values, max(trials // 5, 1), seed, workers=workers)
    reports["gram_sum"] = gs.to_dict()
    asserts.append(check("gram_sum_observed_le_bound", gs.observed, gs.bound))
    asserts.append(check("gram_sum_bound_le_2_sqrt_h", gs.bound, 2 * math.sqrt(reg.h_norm)))

    ratio = 0.0
    for strict in (True, False):
        dets, norms = masked_gram_det_trial(5, 4, _rng(cfg, 4, int(strict)), 10_000, strict)
        ratio = max(ratio, float(np.max(dets / norms)))
    asserts.append(check("masked_gram_det_le_norm_product", ratio, 1.0))

    lap = laplace_sum_check([np.eye(5), 4 * np.eye(5)], [1.0, 2.0], rng, trials=1000, seed=seed)
    reports["laplace_sum"] = lap.to_dict()
    asserts.append(check("laplace_sum_observed_le_bound", lap.observed, lap.bound))
    asserts.append(check("binomial_square_inequality", 0.0 if binomial_square_check() else 1.0, 0.0))
    return {"model": model.describe(), "reports": reports, "assertions": asserts}


def suite_covariance(cfg) -> dict:
    asserts = []
    rng = _rng(cfg, 5)
    tau = rng.uniform(-2, 2, 200)
    E = rng.uniform(-3, 3, 200)
    defect = float(np.max(np.abs(bare_covariance(tau + 2.0, E, 2.0) + bare_covariance(tau, E, 2.0))))
    asserts.append(check("antiperiodicity", defect, 1e-12))
    w_max = [2**k * math.pi / 2 for k in range(5, 11)]
    exact = bare_covariance(0.7, 1.0, 2.0)
    errors = [abs(matsubara_covariance(0.7, 1.0, 2.0, w) - exact) for w in w_max]
    slope = fit_slope(np.log(w_max), np.log(errors))
    asserts.append(in_range("matsubara_loglog_slope", slope, -1.3, -0.7))
    lim = max(abs(bare_covariance(t, 1.0, 64.0) - fkt_limit_covariance(t)) for t in (-0.5, 0.25))
    asserts.append(check("zero_temperature_limit_E1", lim, 1e-12))
    model = build_model(cfg)
    sym = 0.0
    for t in (0.2, 0.9):
        a = covariance_position(SpaceTimePoint(t, [1] * model.d), SpaceTimePoint(0.0, [0] * model.d), model)
        b = covariance_position(SpaceTimePoint(t + model.beta, [1] * model.d), SpaceTimePoint(0.0, [0] * model.d), model)
        sym = max(sym, abs(a + b))
    asserts.append(check("model_antiperiodicity", sym, 1e-12))
    return {"matsubara_errors": [float(e) for e in errors], "slope": slope, "assertions": asserts}


def suite_gram_rep(cfg) -> dict:
    model = build_model(cfg)
    reg = model if model.regularized else model.with_regularization()
    taus = np.linspace(0, reg.beta, 20, endpoint=False)
    worst = 0.0
    for x in range(min(8, reg.L)):
        dx = [x] + [0] * (reg.d - 1)
        for t in taus:
            for tp in taus:
                ref = covariance_position(SpaceTimePoint(t, dx), SpaceTimePoint(tp, [0] * reg.d), reg)
                worst = max(worst, abs(gram_assembly(t, dx, tp, [0] * reg.d, reg) - ref))
    return {"grid": [20, 20, min(8, reg.L)], "assertions": [check("gram_assembly_abs_error", worst, 1e-12)]}


def suite_uv_split(cfg) -> dict:
    model = build_model(cfg).replace(beta=cfg.get("beta") or 4.0)
    res = uv_decay_check(model, cfg["omegas_uv"], STRICT_BUMP)
    asserts = [in_range(f"ratio_Omega_{r['Omega']:g}", r["ratio"], 0.3, 0.7) for r in res["ratios"] if r["checked"]]
    asserts += [check(f"alpha_le_2K_g_over_Omega_{r['Omega']:g}", r["alpha"], r["bound"]) for r in res["rows"] if r["bound_applies"]]
    # C_< + C_> = C on a sample of points
    split = scale_split(model, STRICT_BUMP, 8.0)
    t = np.linspace(-model.beta, model.beta, 41)
    asserts.append(check("ir_plus_uv_equals_full", float(np.max(np.abs(split.ir(t) + split.uv(t) - split.full(t)))), 1e-12))
    if not any(r["bound_applies"] for r in res["rows"]):
        log.warning("no Omega satisfies K ||F||_1 < Omega/4; the 1/Omega bound was not exercised")
    return {"model": model.describe(), "result": res, "assertions": asserts}


def suite_gram_ir(cfg) -> dict:
    model = build_model(cfg).replace(beta=cfg.get("beta") or 4.0)
    rows = [gram_constant_ir(model, SMOOTH_DECAY, O) for O in cfg["omegas_ir"]]
    slope = fit_slope(np.log([r.Omega for r in rows]), [r.gamma_sq for r in rows])
    asserts = [check("gamma_sq_log_slope", slope, 2 * model.h_norm * 1.2)]
    asserts += [check(f"gamma_sq_le_rhs_Omega_{r.Omega:g}", r.gamma_sq, r.bound_rhs) for r in rows]
    return {
        "model": model.describe(),
        "rows": [{"Omega": r.Omega, "gamma_sq": r.gamma_sq, "tail": r.tail_bound, "rhs": r.bound_rhs, "K_prime": r.K_prime} for r in rows],
        "slope": slope,
        "assertions": asserts,
    }


def suite_decay(cfg) -> dict:
    betas = [float(b) for b in cfg["betas_decay"]]
    metal = [decay_constant(MODELS["metal1d"]().replace(beta=b)).value for b in betas]
    insulator = [decay_constant(MODELS["insulator1d"]().replace(beta=b)).value for b in (betas[0], betas[-1])]
    slope = fit_slope(np.log(betas), np.log(metal))
    asserts = [check("metal_loglog_slope", slope, 2.2), check("insulator_ratio", insulator[1] / insulator[0], 1.5)]
    return {"betas": betas, "metal": metal, "insulator": insulator, "slope": slope, "assertions": asserts}


def suite_sector(cfg) -> dict:
    base = MODELS["metal1d"]().describe()
    base.update(L=int(cfg["sector_L"]), beta=cfg.get("beta") or 16.0)
    base.pop("h", None)
    base.pop("h_params", None)
    res = sector_scaling_probe(base, cfg["eps_sector"])
    asserts = [] if res["slope"] is None else [check("shell_loglog_slope", res["slope_floor"], res["slope"])]
    return {"result": res, "assertions": asserts}


def suite_effective_action(cfg) -> dict:
    model = build_model(cfg)
    times = np.array([0.3, 1.1]) * model.beta / 2
    xs = np.array([[0] * model.d, [min(3, model.L - 1)] + [0] * (model.d - 1)])
    C = covariance_matrix(times, xs, times, xs, model)
    delta = 2 * math.sqrt(model.h_norm)
    alpha = decay_bound_matrix(C)
    V = quartic_vertex(2, 1.0)
    V = Interaction(2, {**V.kernels, (1, 1): np.array([[0.2, 0.05], [0.05, -0.1]])})
    h = 1.0
    lams = in_domain_lambdas(V, h, alpha, delta, int(cfg["lambda_count"]))
    taylor = taylor_remainder_check(V, C, h, cfg["P_values"], lams, alpha=alpha, delta=delta)
    asserts = [check(f"remainder_P{p['P']}_lambda_{p['lambda']:.6g}", p["remainder"], p["bound"]) for p in taylor["points"] if p["in_domain"]]

    rank_one = 0.5 * np.ones((2, 2))
    exhaust = taylor_remainder_check(quartic_vertex(2, 0.5), rank_one, h, [2], [2.0**-8])
    asserts += [check("exhaustion_remainder_zero", p["remainder"], 0.0) for p in exhaust["points"]]

    split = scale_split(model, STRICT_BUMP, 8.0)
    tau = times[:, None] - times[None, :]
    site = np.ravel_multi_index(tuple(np.moveaxis(np.mod(xs[:, None, :] - xs[None, :, :], model.L), -1, 0)), (model.L,) * model.d)
    low = np.take_along_axis(split.ir(tau), site[..., None], -1)[..., 0]
    high = np.take_along_axis(split.uv(tau), site[..., None], -1)[..., 0]
    asserts.append(check("semigroup_defect", semigroup_defect(V, low, high), 1e-10))
    return {"taylor": taylor, "exhaustion": exhaust, "assertions": asserts}


SUITE_FUNCS = {
    "car": suite_car,
    "chrono-det": suite_chrono_det,
    "det-bound": suite_det_bound,
    "covariance": suite_covariance,
    "gram-rep": suite_gram_rep,
    "uv-split": suite_uv_split,
    "gram-ir": suite_gram_ir,
    "decay": suite_decay,
    "sector": suite_sector,
    "effective-action": suite_effective_action,
}


# ---------------------------------------------------------------- plumbing


def run_suite(cfg: dict) -> tuple[int, dict]:
    """Run the configured suite(s); returns ``(exit_code, report)``."""
    name = cfg["suite"]
    names = list(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITE_FUNCS:
            raise ConfigError(f"unknown suite {n!r}")
    results = {}
    for n in names:
        log.info("running suite %s", n)
        results[n] = SUITE_FUNCS[n](cfg)
        results[n]["pass"] = all(a["pass"] for a in results[n]["assertions"])
    ok = all(r["pass"] for r in results.values())
    echo = {k: v for k, v in sorted(cfg.items()) if k not in ("out", "format", "threads")}
    report = {"artifact": "fermidet", "version": __version__, "seed": int(cfg["seed"]), "config": echo, "suites": results, "pass": ok}
    return (0 if ok else 1), report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["suite", "assertion", "relation", "observed", "bound", "margin", "pass"])
        for suite, res in sorted(report["suites"].items()):
            for a in res["assertions"]:
                bound = a["bound"] if not isinstance(a["bound"], list) else "|".join(repr(float(b)) for b in a["bound"])
                writer.writerow([suite, a["name"], a["relation"], repr(a["observed"]), bound if isinstance(bound, str) else repr(bound), repr(a["margin"]), a["pass"]])
        return buf.getvalue()
    raise ConfigError(f"unknown format {fmt!r}")


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".verify-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _list_arg(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def parse_args(argv=None):
    p = argparse.ArgumentParser(prog="verify", description="Run fermionic determinant-bound verification suites.")
    p.add_argument("suite", choices=list(SUITES) + ["all"])
    p.add_argument("--config", help="JSON file whose keys mirror the flags")
    p.add_argument("--model", help=f"one of {sorted(MODELS)} or a model JSON file")
    p.add_argument("--L", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="defaults to $FERMIDET_SEED or 0")
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--omegas-uv", dest="omegas_uv", type=_list_arg)
    p.add_argument("--omegas-ir", dest="omegas_ir", type=_list_arg)
    p.add_argument("--betas-decay", dest="betas_decay", type=_list_arg)
    p.add_argument("--eps-sector", dest="eps_sector", type=_list_arg)
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.add_argument("--format", choices=["json", "csv"])
    p.add_argument("--threads", type=int, help="worker processes for trial batches")
    p.add_argument("-v", "--verbose", action="store_true")
    return p.parse_args(argv)


def build_config(args) -> dict:
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("FERMIDET_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"FERMIDET_SEED must be an integer, got {env_seed!r}") from exc
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["suite"] = args.suite
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if int(cfg["trials"]) < 1 or int(cfg["n_max"]) < 1:
        raise ConfigError("trials and n-max must be positive")
    return cfg


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        code, report = run_suite(cfg)
        text = render(report, cfg["format"])
    except (ConfigError, DomainError) as exc:
        print(f"verify: error: {exc}", file=sys.stderr)
        return 2
    if cfg["out"]:
        write_atomic(cfg["out"], text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
