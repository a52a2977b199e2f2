"""Command-line interface: ``bridgepath {prox,path,glm-sim,sde-sim}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
CSV numbers use 17 significant digits; outputs are deterministic given the
inputs and ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import glm_app, sde_app
from ._parallel import THREADS_ENV, default_threads
from .losses import QuadraticLSALoss
from .path import DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE, lambda_max, make_grid, path_diagnostics, solve_path
from .penalty import PenaltySpec
from .prox_core import ThresholdParams, scalar_threshold
from .solvers import ALGORITHMS, SolverConfig

log = logging.getLogger("bridgepath")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

SVG_HASHSALT = "bridgepath"


class UsageError(Exception):
    """Invalid options or input files (exit code 2)."""


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------- problems

def problem_to_dict(loss: QuadraticLSALoss, penalty: PenaltySpec) -> dict:
    return {"loss": loss.to_dict(), "penalty": penalty.to_dict()}


def problem_from_dict(d) -> tuple[QuadraticLSALoss, PenaltySpec]:
    if not isinstance(d, dict) or "loss" not in d:
        raise UsageError("problem file must be a JSON object with a 'loss' entry")
    try:
        loss = QuadraticLSALoss.from_dict(d["loss"])
        pd = dict(d.get("penalty") or {})
        pd.setdefault("block_sizes", list(loss.block_sizes))
        pd.setdefault("q", [1.0] * len(pd["block_sizes"]))
        pen = PenaltySpec.from_dict(pd)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid problem: {exc}") from exc
    return loss, pen


def read_problem(path) -> tuple[QuadraticLSALoss, PenaltySpec]:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"problem file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return problem_from_dict(d)


def write_problem(path, loss, penalty):
    write_json(path, problem_to_dict(loss, penalty))


# ---------------------------------------------------------------- plotting

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = SVG_HASHSALT
    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def plot_threshold_family(path, q_values, lam_w, zmax=4.0):
    plt = _pyplot()
    z = np.linspace(-zmax, zmax, 801)
    fig, ax = plt.subplots(figsize=(5, 4))
    for q in q_values:
        y = [scalar_threshold(ThresholdParams(q, lam_w), v) for v in z]
        ax.plot(z, y, lw=1, label=f"q={q:g}")
    ax.plot(z, z, color="0.7", lw=0.5, ls="--")
    ax.set_xlabel("z")
    ax.set_ylabel("T(z)")
    ax.legend(frameon=False)
    _save_svg(fig, path)
    plt.close(fig)


def plot_paths(path, curves: dict):
    """``curves``: label -> (lambdas, coef array)."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(curves), figsize=(5 * len(curves), 4), squeeze=False)
    for ax, (label, (lams, coef)) in zip(axes[0], curves.items()):
        ax.plot(lams, coef, lw=0.8)
        ax.set_xscale("log")
        ax.invert_xaxis()
        ax.set_xlabel("lambda")
        ax.set_title(label)
    _save_svg(fig, path)
    plt.close(fig)


def plot_curves(path, x, curves: dict, xlabel, ylabel, logx=False):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, y in curves.items():
        ax.plot(x, y, lw=1, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    _save_svg(fig, path)
    plt.close(fig)


# ---------------------------------------------------------------- commands

def _outdir(p) -> Path:
    out = Path(p)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.threads
    try:
        return default_threads()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_prox(args) -> int:
    try:
        params = ThresholdParams(args.q, args.lam, args.w)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    zs = list(args.z or [])
    if args.z_file:
        try:
            zs += [float(v) for v in Path(args.z_file).read_text().split()]
        except ValueError as exc:
            raise UsageError(f"bad value in {args.z_file}: {exc}") from exc
    if not zs:
        raise UsageError("no z values given (use --z or --z-file)")
    rows = [(float(z), scalar_threshold(params, z)) for z in zs]
    if args.out:
        write_csv(args.out, ["z", "value"], rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["z", "value"])
        for z, v in rows:
            w.writerow([fmt(z), fmt(v)])
    if args.plot:
        plot_threshold_family(args.plot, sorted({args.q, 0.1, 0.5, 0.9, 1.0}), params.effective)
    return EXIT_OK


def _parse_lambdas(text):
    vals = [v for v in text.replace(",", " ").split() if v]
    if not vals:
        raise UsageError("empty lambda grid")
    try:
        return np.array([float(v) for v in vals])
    except ValueError as exc:
        raise UsageError(f"bad --lambdas value: {exc}") from exc


def cmd_path(args) -> int:
    loss, pen = read_problem(args.problem)
    cfg = _solver_config(args)
    if args.q is not None:
        try:
            pen = PenaltySpec(tuple(args.q) if len(args.q) > 1 else (args.q[0],) * len(pen.block_sizes),
                              pen.weights, pen.block_sizes)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    lm = lambda_max(loss, pen, args.algo)
    if args.lambdas is not None:
        grid = _parse_lambdas(args.lambdas)
        if np.any(np.diff(grid) >= 0.0) or np.any(grid <= 0.0):
            raise UsageError("--lambdas must be positive and strictly decreasing")
    else:
        try:
            grid = make_grid(lm, args.grid_size, args.grid_ratio) if lm > 0.0 else None
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if grid is None:
            raise UsageError("lambda_max is 0 (the zero vector is optimal); pass --lambdas explicitly")
    out = _outdir(args.out)
    if args.save_problem:
        write_problem(args.save_problem, loss, pen)
    res = solve_path(loss, pen, grid, args.algo, cfg, lam_max=lm)
    res.write_csv(out / "path.csv")
    d = res.to_dict()
    d["diagnostics"] = path_diagnostics(res).to_dict()
    write_json(out / "path.json", d)
    if args.plot:
        curves = {f"q={','.join(f'{q:g}' for q in pen.q)}": (res.lambdas, res.coef)}
        if args.compare_lasso and any(q != 1.0 for q in pen.q):
            lpen = PenaltySpec((1.0,) * len(pen.q), pen.weights, pen.block_sizes)
            lres = solve_path(loss, lpen, grid, args.algo, cfg)
            curves["q=1"] = (lres.lambdas, lres.coef)
        plot_paths(out / "path.svg", curves)
    n_fail = len(res.errors)
    if n_fail:
        log.warning("%d of %d path points failed; see path.json", n_fail, len(grid))
    print(f"wrote {out / 'path.csv'} ({len(grid)} lambdas, {d['diagnostics']['n_jumps']} jumps, "
          f"{n_fail} failures)")
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(step_safety=args.alpha, tol_rel=args.tol, max_iter=args.max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_glm(args) -> int:
    try:
        cfg = glm_app.ExperimentConfig(
            n_train=args.n, n_test=args.n_test if args.n_test is not None else args.n, p=args.p,
            n_zero=args.nzero, sigma=args.sigma, rho=args.rho, q=args.q, folds=args.folds,
            grid_size=args.grid_size, grid_ratio=args.grid_ratio, weights_mode=args.weights,
            algorithm=args.algo, tol_rel=args.tol, max_iter=args.max_iter, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    ests = tuple(args.estimators)
    threads = _threads(args)
    out = _outdir(args.out)
    results = glm_app.run_study(cfg, args.reps, ests, threads)
    summary = glm_app.summarize(results, cfg)
    write_json(out / "results.json", summary)
    rel = results[0].rel_grid
    header = ["rel_lambda"]
    cols = []
    for e in ests:
        cv = np.vstack([r.cv[e].cv_mse for r in results]).mean(axis=0)
        test = np.vstack([r.test_curve[e] for r in results]).mean(axis=0)
        header += [f"cv_mse_{e}", f"test_mse_{e}"]
        cols += [cv, test]
    write_csv(out / "cv_curve.csv", header, [[rel[k]] + [c[k] for c in cols] for k in range(rel.size)])
    first = glm_app.run_replicate(cfg, cfg.seed, ests, keep_paths=True)
    rows = []
    p = cfg.p
    for e in ests:
        path = first.paths[e]
        for k, row in enumerate(path.rows()):
            rows.append([e, rel[k], row["lambda"], row["objective"], row["iterations"],
                         int(row["converged"])] + list(row["theta"]))
    write_csv(out / "path.csv",
              ["estimator", "rel_lambda", "lambda", "objective", "iterations", "converged"]
              + [f"theta_{j + 1}" for j in range(p)], rows)
    if args.plot:
        curves = {e: np.vstack([r.test_curve[e] for r in results]).mean(axis=0) for e in ests}
        plot_curves(out / "test_mse.svg", rel, curves, "lambda / lambda_max", "test MSE", logx=True)
    print(json.dumps(_plain({"test_mse": summary["test_mse"],
                             "bridge_le_lasso_fraction": summary["bridge_le_lasso_fraction"]})))
    return EXIT_OK


def cmd_sde(args) -> int:
    try:
        cfg = sde_app.SdeStudyConfig(
            n=args.n, delta=args.delta, reps=args.reps, q=(args.q1, args.q2),
            delta1=args.delta1, delta2=args.delta2, grid_size=args.grid_size,
            grid_ratio=args.grid_ratio, algorithm=args.algo,
            compare_algorithms=not args.no_compare, compare_reps=args.compare_reps,
            tol_rel=args.tol, max_iter=args.max_iter, seed=args.seed,
        )
        model = _sde_model(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    threads = _threads(args)
    out = _outdir(args.out)
    study = sde_app.run_monte_carlo_study(cfg, model, threads)
    rel = study.rel_grid
    rows = [["qmle", "", study.qmle_mse_rel(), "", ""]]
    sel = {}
    for e in sde_app.ESTIMATORS:
        ms = study.metrics(e)
        sel[e] = ms
        rows += [[e, rel[k], m.mse_rel, m.p0, m.p0_approx] for k, m in enumerate(ms)]
    write_csv(out / "metrics.csv", ["estimator", "rel_lambda", "mse_rel", "p0", "p0_approx"], rows)
    write_csv(out / "selection_curve.csv",
              ["rel_lambda", "p0_bridge", "p0_lasso", "p0_approx_bridge", "p0_approx_lasso"],
              [[rel[k], sel["bridge"][k].p0, sel["lasso"][k].p0,
                sel["bridge"][k].p0_approx, sel["lasso"][k].p0_approx] for k in range(rel.size)])
    it_rows = []
    for e in sde_app.ESTIMATORS:
        for a in ALGORITHMS:
            try:
                mean_it = study.mean_iterations(e, a)
            except KeyError:
                continue
            it_rows += [[e, a, rel[k], mean_it[k]] for k in range(rel.size)]
    write_csv(out / "iterations.csv", ["estimator", "algorithm", "rel_lambda", "mean_iterations"], it_rows)
    summary = {"config": asdict(cfg), "replicates": len(study.outcomes),
               "failed_replicates": study.failures, "table": study.table(),
               "lambda_max_median": {e: study.lam_max_median(e) for e in sde_app.ESTIMATORS}}
    write_json(out / "summary.json", summary)
    if args.save_paths:
        pdir = _outdir(out / "paths")
        for r in range(cfg.reps):
            X = sde_app.euler_maruyama(model, cfg.scheme, seed=cfg.seed + r, burn_in=cfg.burn_in)
            write_csv(pdir / f"rep_{r:04d}.csv", [f"x{i + 1}" for i in range(model.d)], X.tolist())
    if args.plot:
        plot_curves(out / "selection.svg", rel, {f"{e} p0": [m.p0 for m in sel[e]] for e in sel},
                    "lambda / lambda_max", "selection proportion", logx=True)
        it_curves = {}
        for e in sde_app.ESTIMATORS:
            for a in ALGORITHMS:
                try:
                    it_curves[f"{e} {a}"] = study.mean_iterations(e, a)
                except KeyError:
                    pass
        plot_curves(out / "iterations.svg", rel, it_curves, "lambda / lambda_max", "mean iterations", logx=True)
    print(json.dumps(_plain({"replicates": len(study.outcomes), "failed": len(study.failures),
                             "qmle_mse_rel": study.qmle_mse_rel()})))
    return EXIT_OK


def _sde_model(args):
    if args.model is None:
        return sde_app.LinearSdeModel.benchmark()
    try:
        with open(args.model) as fh:
            d = json.load(fh)
        return sde_app.LinearSdeModel(np.array(d["A"], dtype=float), np.array(d["B"], dtype=float))
    except FileNotFoundError as exc:
        raise UsageError(f"model file not found: {args.model}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid model file {args.model}: {exc}") from exc


# ---------------------------------------------------------------- parser

def _add_solver_opts(p):
    p.add_argument("--algo", choices=ALGORITHMS, default="apg", help="solver (default apg)")
    p.add_argument("--alpha", type=float, default=0.9, help="step safety factor in (0,1)")
    p.add_argument("--tol", type=float, default=1e-8, help="relative stopping tolerance")
    p.add_argument("--max-iter", type=int, default=10_000)


def _add_threads(p):
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or the CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bridgepath", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prox", help="evaluate the q-thresholding operator")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--z", type=float, nargs="+")
    p.add_argument("--z-file", help="whitespace-separated z values")
    p.add_argument("--out", help="CSV output file (default: stdout)")
    p.add_argument("--plot", help="SVG file for the operator family")
    p.set_defaults(func=cmd_prox)

    p = sub.add_parser("path", help="solve a regularization path for problem.json")
    p.add_argument("problem")
    p.add_argument("--q", type=float, nargs="+", help="override block exponents")
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    p.add_argument("--grid-ratio", type=float, default=DEFAULT_GRID_RATIO)
    p.add_argument("--lambdas", help="explicit descending grid, comma separated")
    p.add_argument("--out", default=".")
    p.add_argument("--save-problem", help="write the parsed problem back as JSON")
    p.add_argument("--plot", action="store_true", help="write path.svg")
    p.add_argument("--compare-lasso", action="store_true", help="add the q=1 path to the plot")
    _add_solver_opts(p)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("glm-sim", help="penalized regression simulation study")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--nzero", type=int, default=346)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    p.add_argument("--grid-ratio", type=float, default=DEFAULT_GRID_RATIO)
    p.add_argument("--weights", choices=("unit", "adaptive"), default="unit")
    p.add_argument("--estimators", nargs="+", choices=glm_app.ESTIMATORS, default=list(glm_app.ESTIMATORS))
    p.add_argument("--out", default="glm_out")
    p.add_argument("--plot", action="store_true")
    _add_solver_opts(p)
    _add_threads(p)
    p.set_defaults(func=cmd_glm)

    p = sub.add_parser("sde-sim", help="linear diffusion Monte Carlo study")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.015)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--q1", type=float, default=0.5)
    p.add_argument("--q2", type=float, default=0.5)
    p.add_argument("--delta1", type=float, default=4.0)
    p.add_argument("--delta2", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=81)
    p.add_argument("--grid-ratio", type=float, default=1e-8)
    p.add_argument("--compare-reps", type=int, default=20,
                   help="replicates also solved with every algorithm")
    p.add_argument("--no-compare", action="store_true", help="skip the algorithm comparison")
    p.add_argument("--model", help="JSON file with matrices A and B (default: benchmark model)")
    p.add_argument("--save-paths", action="store_true", help="write simulated paths as CSV")
    p.add_argument("--out", default="sde_out")
    p.add_argument("--plot", action="store_true")
    _add_solver_opts(p)
    _add_threads(p)
    p.set_defaults(func=cmd_sde)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
