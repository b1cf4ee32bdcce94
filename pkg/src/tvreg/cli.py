"""Command-line toolkit: fit, cv, bootstrap, simulate, render, diag.

Exit codes: 0 success (fit converged), 2 iteration cap hit, 1 usage or
input errors. Every randomized command requires --seed; reruns with equal
flags produce byte-identical outputs at --threads 1.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import analyze, fileio, simulate
from .graphs import (
    PenaltyGraph,
    add_periodic_edges,
    build_chain,
    build_grid,
    load_edge_list,
)
from .solver import SolverConfig, fit, objective
from .tensor import Dataset, TensorLayout


class UsageError(ValueError):
    pass


def _parse_graph(spec: str, node_count: int | None) -> PenaltyGraph:
    """Build a graph from a CLI spec: chain | grid:AxB[xC] | periodic:P | file:path."""
    kind, _, arg = spec.partition(":")
    if kind == "chain":
        if node_count is None:
            raise UsageError("chain graph needs a node count")
        return build_chain(node_count)
    if kind == "grid":
        try:
            dims = tuple(int(x) for x in arg.split("x"))
        except ValueError:
            raise UsageError(f"bad grid spec {spec!r}") from None
        if not dims:
            raise UsageError(f"bad grid spec {spec!r}")
        g = build_grid(dims)
        if node_count is not None and g.node_count != node_count:
            raise UsageError(
                f"graph/node-count mismatch: grid has {g.node_count} nodes, "
                f"data has {node_count} entries"
            )
        return g
    if kind == "periodic":
        if node_count is None:
            raise UsageError("periodic graph needs a node count")
        try:
            period = int(arg)
        except ValueError:
            raise UsageError(f"bad period in {spec!r}") from None
        return add_periodic_edges(build_chain(node_count), period)
    if kind == "file":
        with open(arg) as fh:
            return load_edge_list(fh.read(), node_count)
    raise UsageError(f"unknown graph spec {spec!r}")


def _load_design(path: str, skip_header: bool) -> np.ndarray:
    X = fileio.read_csv_matrix(path, skip_header=skip_header)
    if X.ndim != 2:
        raise fileio.FormatError(f"{path}: design must be a 2-d matrix")
    return X


def _set_threads(threads: int) -> None:
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    import numba

    numba.set_num_threads(threads)


def _solver_config(args, lam: float) -> SolverConfig:
    return SolverConfig(
        lam=lam,
        rho=args.rho,
        tol=args.tol,
        max_iter=args.max_iter,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def cmd_fit(args) -> int:
    X = _load_design(args.x, args.header)
    Y, layout = fileio.read_tvt(args.y)
    graph = _parse_graph(args.graph, layout.M)
    dataset = Dataset(X=X, Y=Y, layout=layout)
    if args.cv:
        grid = _parse_grid(args.grid)
        report = analyze.cross_validate(
            dataset, graph, grid, folds=args.folds, seed=args.seed,
            config=_solver_config(args, 0.0),
        )
        lam = report.selected
    elif args.lam is not None:
        lam = args.lam
    else:
        raise UsageError("one of --lambda or --cv is required")
    result = fit(dataset, graph, _solver_config(args, lam))
    obj = objective(X, Y, result.gamma, lam, graph)
    fileio.write_csv_matrix(f"{args.out}.gamma.csv", result.gamma)
    fileio.write_tvt(f"{args.out}.theta.tvt", result.theta, layout)
    trace = np.column_stack(
        [np.arange(1, result.iterations + 1, dtype=float), result.trace]
    )
    fileio.write_csv_matrix(f"{args.out}.trace.csv", trace)
    fileio.write_meta(
        f"{args.out}.meta",
        {
            "converged": result.converged,
            "iterations": result.iterations,
            "objective": obj,
            "lambda": float(lam),
        },
    )
    return 0 if result.converged else 2


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not grid:
        raise UsageError("empty grid")
    return grid


def cmd_cv(args) -> int:
    X = _load_design(args.x, args.header)
    Y, layout = fileio.read_tvt(args.y)
    graph = _parse_graph(args.graph, layout.M)
    dataset = Dataset(X=X, Y=Y, layout=layout)
    grid = _parse_grid(args.grid)
    report = analyze.cross_validate(
        dataset, graph, grid, folds=args.folds, seed=args.seed,
        config=_solver_config(args, 0.0),
    )
    rows = np.column_stack(
        [np.asarray(report.grid), report.fold_mse, report.mean_mse]
    )
    fileio.write_csv_matrix(args.out, rows)
    print(format(report.selected, ".17g"))
    return 0


def cmd_bootstrap(args) -> int:
    X = _load_design(args.x, args.header)
    Y, layout = fileio.read_tvt(args.y)
    graph = _parse_graph(args.graph, layout.M)
    dataset = Dataset(X=X, Y=Y, layout=layout)
    band = analyze.bootstrap_bands(
        dataset, graph, args.lam, B=args.B, alpha=args.alpha,
        seed=args.seed, config=_solver_config(args, args.lam),
    )
    fileio.write_csv_matrix(f"{args.out}.lower.csv", band.lower)
    fileio.write_csv_matrix(f"{args.out}.upper.csv", band.upper)
    return 0


def _simulate_single(args, methods, n_values, scen_cfg):
    """One-replicate variant: no SD column is defined."""
    means = np.empty((len(n_values), len(methods)))
    base = SolverConfig(
        lam=0.0, rho=args.rho, tol=args.tol, max_iter=args.max_iter,
        seed=args.seed,
    )
    cv_base = SolverConfig(
        lam=0.0, rho=args.rho, tol=args.cv_tol, max_iter=args.max_iter,
        seed=args.seed,
    )
    for ni, n in enumerate(n_values):
        data_seed = simulate._rep_seed(args.scenario, n, 0, 0, args.seed)
        cv_seed = int(
            simulate._rep_seed(args.scenario, n, 0, 1, args.seed)
            .generate_state(1)[0]
        )
        scen = simulate.generate(args.scenario, n, data_seed, scen_cfg)
        for mi, mth in enumerate(methods):
            graph = scen.alt_graph if mth == "tvtr_periodic" else scen.graph
            if mth == "ols":
                gamma = simulate.baseline_ols(scen.dataset)
            elif mth in ("tvtr", "tvtr_periodic"):
                gamma = simulate._fit_tvtr(
                    scen, graph, scen_cfg.cv_grid, cv_seed, base, cv_base
                )
            elif mth == "tv_ols":
                gamma = simulate._fit_two_stage(
                    scen, graph, scen_cfg.cv_grid, cv_seed,
                    simulate.baseline_tv_ols,
                )
            else:
                gamma = simulate._fit_two_stage(
                    scen, graph, scen_cfg.cv_grid, cv_seed,
                    simulate.baseline_ols_tv,
                )
            means[ni, mi] = simulate.mean_deviation(gamma, scen.gamma_star)
    return means


def cmd_simulate(args) -> int:
    methods = tuple(args.methods.split(","))
    n_values = tuple(int(x) for x in args.n.split(","))
    scen_cfg = (
        simulate.load_scenario_config(args.scenario_config)
        if args.scenario_config
        else simulate.default_config()
    )
    header = ["n"]
    for mth in methods:
        header.extend([f"{mth}_mean", f"{mth}_sd"])
    lines = [",".join(header)]
    if args.replicates == 1:
        means = _simulate_single(args, methods, n_values, scen_cfg)
        sds = None
    else:
        base = SolverConfig(
            lam=0.0, rho=args.rho, tol=args.tol, max_iter=args.max_iter,
            seed=args.seed,
        )
        cv_base = (
            SolverConfig(
                lam=0.0, rho=args.rho, tol=args.cv_tol,
                max_iter=args.max_iter, seed=args.seed,
            )
            if args.cv_tol is not None
            else base
        )
        report = simulate.run_benchmark(
            args.scenario, n_values, methods, args.replicates, args.seed,
            config=base, cv_config=cv_base, scenario_config=scen_cfg,
            progress=_progress if args.verbose else None,
        )
        means, sds = report.means, report.sds
        for ni, n in enumerate(n_values):
            for mi, mth in enumerate(methods):
                print(
                    f"{args.scenario} n={n} {mth}: "
                    f"{means[ni, mi]:.4f} ({sds[ni, mi]:.4f}) "
                    f"[{report.runtimes[ni, mi]:.1f}s]",
                    file=sys.stderr,
                )
    for ni, n in enumerate(n_values):
        cells = [str(n)]
        for mi in range(len(methods)):
            cells.append(format(means[ni, mi], ".17g"))
            cells.append("" if sds is None else format(sds[ni, mi], ".17g"))
        lines.append(",".join(cells))
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _progress(scenario_id, n, rep, devs):
    print(
        f"{scenario_id} n={n} replicate {rep}: "
        + " ".join(format(d, ".4f") for d in devs),
        file=sys.stderr,
    )


def cmd_render(args) -> int:
    gamma = fileio.read_csv_matrix(args.gamma, skip_header=args.header)
    try:
        dims = tuple(int(x) for x in args.dims.split("x"))
    except ValueError:
        raise UsageError(f"bad dims {args.dims!r}") from None
    if len(dims) != 2:
        raise UsageError("render needs two dims, e.g. 40x40")
    if not 0 <= args.row < gamma.shape[0]:
        raise UsageError(
            f"row {args.row} out of range for {gamma.shape[0]} maps"
        )
    fileio.write_pgm(args.out, gamma[args.row], dims)
    return 0


def cmd_diag(args) -> int:
    graph = _parse_graph(args.graph, args.nodes)
    diag = analyze.theory_diagnostics(graph, args.n, args.sigma, args.delta)
    print(f"inverse_scaling={diag.inv_scaling:.17g}")
    print(f"max_degree={diag.max_degree}")
    print(f"lambda_recommended={diag.lambda_rec:.17g}")
    return 0


def _add_solver_flags(p, need_seed=True):
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=2000)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--seed", type=int, required=need_seed)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument(
        "--header", action="store_true",
        help="skip one header row when reading CSV inputs",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvreg",
        description=(
            "Total-variation regularized regression of array outcomes on "
            "scalar covariates"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit coefficient maps")
    p.add_argument("--x", required=True, help="design matrix CSV (n x p)")
    p.add_argument("--y", required=True, help="outcomes TVT file")
    p.add_argument("--graph", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--cv", action="store_true")
    p.add_argument("--grid", default="0.1,0.25,0.5,1,1.5,2,3")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--out", required=True, help="output path prefix")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validated penalty selection")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--grid", default="0.1,0.25,0.5,1,1.5,2,3")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--out", required=True, help="cv table CSV path")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("bootstrap", help="entrywise coefficient bands")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output path prefix")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="replicated synthetic benchmark")
    p.add_argument(
        "--scenario", required=True, choices=simulate.SCENARIO_IDS
    )
    p.add_argument("--n", required=True, help="sample size(s), comma-separated")
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument(
        "--methods", default="tvtr",
        help=f"comma-separated subset of {','.join(simulate.METHODS)}",
    )
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument(
        "--scenario-config", dest="scenario_config", default=None,
        help="override the built-in scenario constants file",
    )
    p.add_argument(
        "--cv-tol", dest="cv_tol", type=float, default=1e-3,
        help="solver tolerance for the CV fits only (default 1e-3)",
    )
    p.add_argument("--verbose", action="store_true")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_simulate, tol=1e-4)

    p = sub.add_parser("render", help="export a coefficient map as PGM")
    p.add_argument("--gamma", required=True, help="coefficient CSV")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--dims", required=True, help="AxB")
    p.add_argument("--out", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("diag", help="graph diagnostics and penalty level")
    p.add_argument("--graph", required=True)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_diag)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract reserves 2 for
        # iteration caps, so remap
        return 1 if exc.code else 0
    try:
        _set_threads(getattr(args, "threads", 1))
        return args.func(args)
    except (
        UsageError,
        fileio.FormatError,
        ValueError,
        OSError,
    ) as exc:
        print(f"tvreg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
