"""Command-line front end: learning curves, threshold reports, simulations.

Outputs are machine-readable and reproducible: every file starts with a
comment header holding the tool version and the fully resolved configuration
(defaults < config file < flags), and rerunning that configuration
regenerates the file byte-for-byte.

Exit codes: 0 success, 1 usage or solver failure, 2 no transition found.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .amp import AmpConfig, amp_overlaps, amp_run
from .erm_sim import empirical_overlaps, fit_cross_entropy, fit_square, generate, test_error
from .free_entropy import phi_of_fixed_point, scan_transitions
from .generalization import gen_error_bayes, gen_error_erm
from .prior import PriorSpec
from .reduction import reduce_weights
from .state_evolution import SEConfig, StudentSpec, run_fixed_point

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_TRANSITION = 2


def _default_threads() -> int:
    return int(os.environ.get("MULTIPERC_THREADS", "1"))


def parse_grid(spec: str):
    """lo:hi:step (inclusive of hi up to half a step) -> list of floats."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be lo:hi:step, got {spec!r}")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid {spec!r}")
    return [float(a) for a in np.arange(lo, hi + step / 2, step)]


def parse_log_grid(spec: str):
    """lo:hi:log[:n] -> n log-spaced points (default n = 10)."""
    parts = spec.split(":")
    if len(parts) not in (3, 4) or parts[2] != "log":
        raise ValueError(f"log grid must be lo:hi:log[:n], got {spec!r}")
    lo, hi = float(parts[0]), float(parts[1])
    n = int(parts[3]) if len(parts) == 4 else 10
    if lo <= 0 or hi <= lo or n < 2:
        raise ValueError(f"bad log grid {spec!r}")
    return [float(x) for x in np.geomspace(lo, hi, n)]


def _teacher(name: str, k: int) -> PriorSpec:
    if name == "gaussian":
        return PriorSpec.gaussian(k)
    if name == "rademacher":
        # k = 2 runs the classical binary-teacher calibration.
        return PriorSpec.rademacher_binary() if k == 2 else PriorSpec.rademacher(k)
    raise ValueError(f"unknown teacher {name!r}")


def _header_lines(cmd: str, cfg: dict):
    # The output path and worker count do not affect the data; leaving them
    # out keeps reruns of a printed config byte-identical.
    shown = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    return [
        f"# tool: multiperc {__version__}",
        f"# command: {cmd}",
        f"# config: {json.dumps(shown, sort_keys=True)}",
    ]


def _write_csv(path, cmd: str, cfg: dict, fieldnames, rows):
    out = open(path, "w", newline="") if path != "-" else sys.stdout
    try:
        for line in _header_lines(cmd, cfg):
            out.write(line + "\n")
        writer = csv.DictWriter(out, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if path != "-":
            out.close()


def _mat_cols(prefix: str, dim: int):
    return [f"{prefix}_{i}{j}" for i in range(dim) for j in range(dim)]


def _mat_row(prefix: str, mat: np.ndarray):
    dim = mat.shape[0]
    return {f"{prefix}_{i}{j}": repr(float(mat[i, j])) for i in range(dim) for j in range(dim)}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# se-bayes / se-erm


def _se_bayes_point(payload):
    alpha, cfgd = payload
    teacher = _teacher(cfgd["teacher"], cfgd["k"])
    fp = run_fixed_point(SEConfig(alpha=alpha, teacher=teacher, student=StudentSpec.bayes(),
                                  gh_order=cfgd["gh_order"], damping=cfgd["damping"]))
    Qstar = teacher.qstar()
    eps, eps_se = gen_error_bayes(fp.state.q, Qstar, cfgd["k"], cfgd["n_mc"], cfgd["seed"])
    phi = phi_of_fixed_point(fp, teacher, cfgd["gh_order"])
    row = {"alpha": repr(alpha), "converged": int(fp.converged), "iterations": fp.iterations,
           "residual": repr(fp.residual), "eps_gen": repr(eps), "eps_stderr": repr(eps_se),
           "phi": repr(phi)}
    row.update(_mat_row("q", fp.state.q))
    row.update(_mat_row("qhat", fp.state.qhat))
    return fp.converged, row


def _se_erm_point(payload):
    alpha, cfgd = payload
    k = cfgd["k"]
    loss = cfgd["loss"]
    if loss == "square":
        teacher = PriorSpec.gaussian_full(k) if cfgd["teacher"] == "gaussian" else None
        if teacher is None:
            raise ValueError("square-loss theory is implemented for the gaussian teacher")
    else:
        teacher = _teacher(cfgd["teacher"], k)
    student = StudentSpec.erm("cross_entropy" if loss == "xent" else loss, k, cfgd["lam"])
    fp = run_fixed_point(SEConfig(alpha=alpha, teacher=teacher, student=student,
                                  gh_order=cfgd["gh_order"], damping=cfgd["damping"]))
    eps, eps_se = gen_error_erm(fp.state.m, fp.state.q, teacher.qstar(), k,
                                cfgd["n_mc"], cfgd["seed"])
    row = {"alpha": repr(alpha), "converged": int(fp.converged), "iterations": fp.iterations,
           "residual": repr(fp.residual), "eps_gen": repr(eps), "eps_stderr": repr(eps_se)}
    for name, mat in (("m", fp.state.m), ("q", fp.state.q), ("V", fp.state.V)):
        row.update(_mat_row(name, mat))
    return fp.converged, row


_SE_BAYES_DEFAULTS = dict(k=3, teacher="gaussian", alpha="0.5:8:0.25", gh_order=80,
                          damping=0.5, n_mc=400_000, seed=1234, threads=None, out="-",
                          allow_partial=False)
_SE_ERM_DEFAULTS = dict(k=3, teacher="gaussian", loss="xent", lam=0.01, alpha="1:8:0.5",
                        gh_order=80, damping=0.5, n_mc=400_000, seed=1234, threads=None,
                        out="-", allow_partial=False)


def _run_grid(points, worker, threads):
    threads = threads or _default_threads()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, points))
    return [worker(p) for p in points]


def cmd_se_bayes(args) -> int:
    cfg = _resolve(args, _SE_BAYES_DEFAULTS)
    alphas = parse_grid(cfg["alpha"])
    if min(alphas) <= 0:
        print("error: alpha grid must be positive", file=sys.stderr)
        return EXIT_ERROR
    results = _run_grid([(a, cfg) for a in alphas], _se_bayes_point, cfg["threads"])
    dim = _teacher(cfg["teacher"], cfg["k"]).dim
    fields = (["alpha", "converged", "iterations", "residual"] + _mat_cols("q", dim)
              + _mat_cols("qhat", dim) + ["eps_gen", "eps_stderr", "phi"])
    _write_csv(cfg["out"], "se-bayes", cfg, fields, [r for _, r in results])
    if not all(ok for ok, _ in results) and not cfg["allow_partial"]:
        print("error: some grid points did not converge (use --allow-partial to keep going)",
              file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_se_erm(args) -> int:
    cfg = _resolve(args, _SE_ERM_DEFAULTS)
    alphas = parse_grid(cfg["alpha"])
    if min(alphas) <= 0:
        print("error: se-erm needs alpha > 0", file=sys.stderr)
        return EXIT_ERROR
    results = _run_grid([(a, cfg) for a in alphas], _se_erm_point, cfg["threads"])
    k = cfg["k"]
    dim = k if cfg["loss"] == "square" else k - 1
    fields = (["alpha", "converged", "iterations", "residual"] + _mat_cols("m", dim)
              + _mat_cols("q", dim) + _mat_cols("V", dim) + ["eps_gen", "eps_stderr"])
    _write_csv(cfg["out"], "se-erm", cfg, fields, [r for _, r in results])
    if not all(ok for ok, _ in results) and not cfg["allow_partial"]:
        print("error: some grid points did not converge", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan-transition

_SCAN_DEFAULTS = dict(k=3, teacher="rademacher", alpha_lo=None, alpha_hi=None, grid_step=None,
                      gh_order=80, bracket=0.01, n_mc=200_000, seed=1234, out="-")

_SCAN_RANGES = {3: (2.0, 3.2, 0.1), 2: (1.0, 1.7, 0.05)}


def cmd_scan_transition(args) -> int:
    cfg = _resolve(args, _SCAN_DEFAULTS)
    lo, hi, step = _SCAN_RANGES.get(cfg["k"], (1.0, 4.0, 0.1))
    cfg["alpha_lo"] = cfg["alpha_lo"] if cfg["alpha_lo"] is not None else lo
    cfg["alpha_hi"] = cfg["alpha_hi"] if cfg["alpha_hi"] is not None else hi
    cfg["grid_step"] = cfg["grid_step"] if cfg["grid_step"] is not None else step
    teacher = _teacher(cfg["teacher"], cfg["k"])
    rep = scan_transitions(cfg["alpha_lo"], cfg["alpha_hi"], cfg["grid_step"], teacher,
                           gh_order=cfg["gh_order"], bracket=cfg["bracket"],
                           n_mc=cfg["n_mc"], seed=cfg["seed"])
    payload = {
        "tool": "multiperc",
        "version": __version__,
        "config": cfg,
        "found": rep.found,
        "alpha_it": None if math.isnan(rep.alpha_it) else rep.alpha_it,
        "alpha_algo": None if math.isnan(rep.alpha_algo) else rep.alpha_algo,
        "it_bracket": [None if math.isnan(v) else v for v in rep.it_bracket],
        "algo_bracket": [None if math.isnan(v) else v for v in rep.algo_bracket],
        "message": rep.message,
        "curve": [asdict(p) for p in rep.curve],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if cfg["out"] == "-":
        print(text)
    else:
        with open(cfg["out"], "w") as fh:
            fh.write(text + "\n")
    if not rep.found:
        print(f"no transition: {rep.message}", file=sys.stderr)
        return EXIT_NO_TRANSITION
    return EXIT_OK


# ---------------------------------------------------------------------------
# amp / erm-fit / learning-curve

_AMP_DEFAULTS = dict(k=3, teacher="rademacher", alpha=3.5, d=2000, seeds=20, seed0=0,
                     damping=0.3, tol=1e-6, max_iter=250, n_test=200_000, gh_order=80,
                     threads=None, out="-")


def _amp_seed(payload):
    seed, cfgd = payload
    k, d = cfgd["k"], cfgd["d"]
    n = int(round(cfgd["alpha"] * d))
    ds = generate(d, n, k, cfgd["teacher"], seed)
    teacher = _teacher(cfgd["teacher"], k)
    w_red = reduce_weights(ds.W_star) if teacher.dim == k - 1 else ds.W_star
    state, trace = amp_run(ds.X, ds.y, AmpConfig(teacher=teacher, damping=cfgd["damping"],
                                                 tol=cfgd["tol"], max_iter=cfgd["max_iter"],
                                                 seed=seed), teacher_w=w_red)
    m, q = amp_overlaps(state, w_red)
    # Fresh-sample error of the AMP estimator in reduced coordinates.
    rng_err = test_error_reduced(state.what, w_red, k, cfgd["n_test"], seed)
    row = {"seed": seed, "iterations": state.iteration, "test_error": repr(rng_err)}
    row.update(_mat_row("m", m))
    row.update(_mat_row("q", q))
    return row, m, q, rng_err


def test_error_reduced(W_red: np.ndarray, W_star_red: np.ndarray, k: int, n_test: int, seed: int) -> float:
    from .quadrature import philox
    from .reduction import argmax_labels

    rng = philox(seed, stream=7)
    d = W_red.shape[0]
    err = 0
    done = 0
    while done < n_test:
        n = min(100_000, n_test - done)
        X = rng.standard_normal((n, d))
        err += int(np.sum(argmax_labels(X @ W_red, k) != argmax_labels(X @ W_star_red, k)))
        done += n
    return err / n_test


def cmd_amp(args) -> int:
    cfg = _resolve(args, _AMP_DEFAULTS)
    rows = _run_grid([(cfg["seed0"] + i, cfg) for i in range(cfg["seeds"])], _amp_seed,
                     cfg["threads"])
    teacher = _teacher(cfg["teacher"], cfg["k"])
    fp = run_fixed_point(SEConfig(alpha=cfg["alpha"], teacher=teacher, student=StudentSpec.bayes(),
                                  gh_order=cfg["gh_order"]))
    dim = teacher.dim
    fields = ["seed", "iterations"] + _mat_cols("m", dim) + _mat_cols("q", dim) + ["test_error"]
    out_rows = [r for r, *_ in rows]
    qs = np.array([q for _, _, q, _ in rows])
    errs = np.array([e for *_, e in rows])
    summary = {"seed": "mean", "iterations": "",
               "test_error": repr(float(errs.mean()))}
    summary.update({k2: repr(float(v)) for k2, v in zip(_mat_cols("q", dim), qs.mean(axis=0).ravel())})
    summary.update({k2: "" for k2 in _mat_cols("m", dim) if k2 not in summary})
    se_row = {"seed": "se_prediction", "iterations": "", "test_error": ""}
    se_row.update({k2: repr(float(v)) for k2, v in zip(_mat_cols("q", dim), fp.state.q.ravel())})
    se_row.update({k2: "" for k2 in _mat_cols("m", dim) if k2 not in se_row})
    _write_csv(cfg["out"], "amp", cfg, fields, out_rows + [summary, se_row])
    return EXIT_OK


_ERMFIT_DEFAULTS = dict(k=3, teacher="gaussian", loss="xent", lam=0.01, alpha=3.0, d=500,
                        seeds=50, seed0=0, n_test=100_000, tol=None, threads=None, out="-")


def _erm_fit_seed(payload):
    seed, cfgd = payload
    k, d = cfgd["k"], cfgd["d"]
    n = int(round(cfgd["alpha"] * d))
    ds = generate(d, n, k, cfgd["teacher"], seed)
    if cfgd["loss"] == "square":
        sol = fit_square(ds, cfgd["lam"])
    else:
        sol = fit_cross_entropy(ds, cfgd["lam"], cfgd["tol"])
    reduce = cfgd["loss"] != "square"
    m, q = empirical_overlaps(sol.W, ds.W_star, d, reduce=reduce)
    err, err_se = test_error(sol.W, ds.W_star, cfgd["n_test"], seed)
    row = {"seed": seed, "test_error": repr(err), "test_stderr": repr(err_se),
           "grad_norm": repr(sol.grad_norm)}
    row.update(_mat_row("m", m))
    row.update(_mat_row("q", q))
    return row, err


def cmd_erm_fit(args) -> int:
    cfg = _resolve(args, _ERMFIT_DEFAULTS)
    results = _run_grid([(cfg["seed0"] + i, cfg) for i in range(cfg["seeds"])],
                        _erm_fit_seed, cfg["threads"])
    dim = cfg["k"] if cfg["loss"] == "square" else cfg["k"] - 1
    fields = (["seed", "test_error", "test_stderr", "grad_norm"]
              + _mat_cols("m", dim) + _mat_cols("q", dim))
    rows = [r for r, _ in results]
    errs = np.array([e for _, e in results])
    rows.append({"seed": "mean", "test_error": repr(float(errs.mean())),
                 "test_stderr": repr(float(errs.std(ddof=1) / math.sqrt(len(errs)))),
                 "grad_norm": ""})
    _write_csv(cfg["out"], "erm-fit", cfg, fields, rows)
    return EXIT_OK


_CURVE_DEFAULTS = dict(k=3, teacher="gaussian", loss="xent", alpha=3.0, lam=None,
                       lambda_grid=None, alpha_grid=None, d=500, seeds=20, seed0=0,
                       n_test=100_000, n_mc=400_000, gh_order=80, threads=None, out="-")


def _curve_point(payload):
    alpha, lam, cfgd = payload
    k = cfgd["k"]
    loss_kind = "cross_entropy" if cfgd["loss"] == "xent" else cfgd["loss"]
    teacher = PriorSpec.gaussian_full(k) if loss_kind == "square" else _teacher(cfgd["teacher"], k)
    fp = run_fixed_point(SEConfig(alpha=alpha, teacher=teacher,
                                  student=StudentSpec.erm(loss_kind, k, lam),
                                  gh_order=cfgd["gh_order"]))
    eps_th, eps_th_se = gen_error_erm(fp.state.m, fp.state.q, teacher.qstar(), k,
                                      cfgd["n_mc"], cfgd["seed0"] + 99)
    errs = []
    for i in range(cfgd["seeds"]):
        sub = (cfgd["seed0"] + i, {**cfgd, "lam": lam, "alpha": alpha, "tol": None})
        _, err = _erm_fit_seed(sub)
        errs.append(err)
    errs = np.array(errs)
    return {
        "alpha": repr(alpha), "lambda": repr(lam),
        "eps_theory": repr(eps_th), "eps_theory_stderr": repr(eps_th_se),
        "eps_sim_mean": repr(float(errs.mean())),
        "eps_sim_stderr": repr(float(errs.std(ddof=1) / math.sqrt(len(errs)))),
        "converged": int(fp.converged),
    }


def cmd_learning_curve(args) -> int:
    cfg = _resolve(args, _CURVE_DEFAULTS)
    if cfg["lambda_grid"]:
        lams = parse_log_grid(cfg["lambda_grid"])
        points = [(cfg["alpha"], lam, cfg) for lam in lams]
    elif cfg["alpha_grid"]:
        if cfg["lam"] is None:
            print("error: --alpha-grid needs --lam", file=sys.stderr)
            return EXIT_ERROR
        points = [(a, cfg["lam"], cfg) for a in parse_grid(cfg["alpha_grid"])]
    else:
        print("error: provide --lambda-grid or --alpha-grid", file=sys.stderr)
        return EXIT_ERROR
    rows = _run_grid(points, _curve_point, cfg["threads"])
    fields = ["alpha", "lambda", "eps_theory", "eps_theory_stderr", "eps_sim_mean",
              "eps_sim_stderr", "converged"]
    _write_csv(cfg["out"], "learning-curve", cfg, fields, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multiperc",
                                description="Multi-class teacher-student perceptron laboratory")
    p.add_argument("--version", action="version", version=f"multiperc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    none_types = {"alpha_lo": float, "alpha_hi": float, "grid_step": float,
                  "threads": int, "tol": float, "lam": float,
                  "lambda_grid": str, "alpha_grid": str}

    def add_common(sp, defaults):
        sp.add_argument("--config", help="JSON file with defaults for this command")
        for key, val in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(val, bool):
                sp.add_argument(flag, action="store_const", const=True, default=None)
            elif val is None:
                sp.add_argument(flag, type=none_types.get(key, str), default=None)
            elif isinstance(val, int):
                sp.add_argument(flag, type=int, default=None)
            elif isinstance(val, float):
                sp.add_argument(flag, type=float, default=None)
            else:
                sp.add_argument(flag, type=str, default=None)

    sp = sub.add_parser("se-bayes", help="Bayes-optimal state evolution over an alpha grid")
    add_common(sp, _SE_BAYES_DEFAULTS)
    sp.set_defaults(func=cmd_se_bayes)

    sp = sub.add_parser("se-erm", help="ERM state evolution over an alpha grid")
    add_common(sp, _SE_ERM_DEFAULTS)
    sp.set_defaults(func=cmd_se_erm)

    sp = sub.add_parser("scan-transition", help="locate alpha_IT and alpha_algo (JSON report)")
    add_common(sp, _SCAN_DEFAULTS)
    sp.set_defaults(func=cmd_scan_transition)

    sp = sub.add_parser("amp", help="message passing on finite instances vs the SE prediction")
    add_common(sp, _AMP_DEFAULTS)
    sp.set_defaults(func=cmd_amp)

    sp = sub.add_parser("erm-fit", help="finite-size ERM fits: overlaps and test errors")
    add_common(sp, _ERMFIT_DEFAULTS)
    sp.set_defaults(func=cmd_erm_fit)

    sp = sub.add_parser("learning-curve", help="joined theory + simulation table")
    add_common(sp, _CURVE_DEFAULTS)
    sp.set_defaults(func=cmd_learning_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
