"""Command-line front end: simulate / fit / eval (plus a hidden bench).

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, _backend, engine, metrics, simulate
from .datasets import (
    AdmmConfig,
    FitConfig,
    Hyperparameters,
    load_dataset,
    save_dataset,
)

KIND_ALIASES = {
    "er": "er_shared",
    "er_shared": "er_shared",
    "blocked": "blocked",
    "hub": "hub",
    "scale-free": "scale_free",
    "scale_free": "scale_free",
    "small-world": "small_world",
    "small_world": "small_world",
}


def _threads_from(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("PLNET_THREADS", "0") or 0)


def _write_estimates(out_dir: str, state, threshold: float = 1e-8) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for k, (omega, beta) in enumerate(zip(state.omegas, state.betas), start=1):
        np.savetxt(os.path.join(out_dir, f"omega_{k}.csv"), omega,
                   delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(out_dir, f"beta_{k}.csv"), beta,
                   delimiter=",", fmt="%.17g")
        with open(os.path.join(out_dir, f"edges_{k}.tsv"), "w") as fh:
            p = omega.shape[0]
            for i in range(p):
                for j in range(i + 1, p):
                    if abs(omega[i, j]) > threshold:
                        fh.write(f"{i + 1}\t{j + 1}\t{omega[i, j]:.17g}\n")


def cmd_simulate(args, parser) -> int:
    try:
        spec = simulate.GraphSpec(kind=KIND_ALIASES[args.kind], p=args.p,
                                  n_groups=args.k_groups, s=args.s)
    except ValueError as e:
        parser.error(str(e))
    result = simulate.simulate_dataset(spec, n=args.n, seed=args.seed,
                                       d=args.d, family=args.family)
    save_dataset(args.out, result.dataset)
    simulate.write_truth(args.out, result.omegas)
    manifest = {
        "kind": spec.kind, "p": spec.p, "k_groups": spec.n_groups,
        "n": args.n, "d": args.d, "s": spec.s, "seed": args.seed,
        "family": args.family, "out": args.out,
    }
    print(json.dumps(manifest))
    return 0


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_outer_iter=args.max_iter,
        outer_tol=args.tol,
        admm=AdmmConfig(rho=args.rho),
        threads=_threads_from(args),
    )


def cmd_fit(args, parser) -> int:
    if not args.grid and (args.v0 is None or args.v1 is None):
        parser.error("provide --v0 and --v1, or use --grid")
    dataset = load_dataset(args.data)
    config = _fit_config(args)
    tau = math.inf if args.tau in (None, "inf") else float(args.tau)

    if args.grid:
        total_n = sum(g.n_obs for g in dataset.groups)
        grid = engine.default_grid(dataset.n_groups, dataset.p, total_n,
                                   ratio=args.ratio, p0=args.p0, tau=tau)
        state, reports = engine.grid_fit(dataset, grid, gamma=args.gamma,
                                         config=config)
        report_dicts = [r.to_json_dict() for r in reports]
    else:
        hyper = Hyperparameters(p0=args.p0, v0=args.v0, v1=args.v1, tau=tau)
        state, _, report = engine.fit(dataset, hyper, config)
        report_dicts = [report.to_json_dict()]
        report_dicts[0]["selected"] = True

    _write_estimates(args.out, state)
    payload = {
        "backend": _backend.BACKEND,
        "threads": config.resolved_threads(),
        "gamma": args.gamma,
        "grid": bool(args.grid),
        "reports": report_dicts,
    }
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    selected = next(r for r in report_dicts if r["selected"])
    print(json.dumps({
        "out": args.out,
        "converged": selected["converged"],
        "iterations": selected["outer_iterations"],
        "total_ebic": selected["total_ebic"],
    }))
    return 0


def _load_estimates(directory: str, parser, prefix: str = "omega"):
    omegas = []
    k = 1
    while True:
        path = os.path.join(directory, f"{prefix}_{k}.csv")
        if not os.path.exists(path):
            break
        omegas.append(np.loadtxt(path, delimiter=",", ndmin=2))
        k += 1
    if not omegas:
        parser.error(f"no {prefix}_1.csv under {directory}")
    return omegas


def _read_truth_edges(path: str) -> set[tuple[int, int]]:
    edges = set()
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) >= 2:
                i, j = int(parts[0]) - 1, int(parts[1]) - 1
                edges.add((min(i, j), max(i, j)))
    return edges


def _score(omegas, truth_dir, parser, threshold):
    rows = []
    for k, omega in enumerate(omegas, start=1):
        edges_path = os.path.join(truth_dir, f"truth_edges_{k}.tsv")
        omega_path = os.path.join(truth_dir, f"truth_omega_{k}.csv")
        if not (os.path.exists(edges_path) and os.path.exists(omega_path)):
            parser.error(f"missing truth files for group {k} in {truth_dir}")
        truth_edges = _read_truth_edges(edges_path)
        truth_omega = np.loadtxt(omega_path, delimiter=",", ndmin=2)
        est = metrics.edge_set(omega, threshold)
        c = metrics.confusion(est, truth_edges, omega.shape[0])
        precision, recall = metrics.precision_recall(c)
        rows.append({
            "group": k,
            "tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn,
            "mcc": metrics.mcc(c),
            "precision": precision,
            "recall": recall,
            "mofe": metrics.mofe(omega, truth_omega),
        })
    return rows


def _mean(rows, key):
    return float(np.mean([r[key] for r in rows])) if rows else 0.0


def cmd_eval(args, parser) -> int:
    omegas = _load_estimates(args.estimates, parser)
    rows = _score(omegas, args.truth, parser, args.threshold)
    payload = {
        "per_group": rows,
        "mean": {key: _mean(rows, key)
                 for key in ("mcc", "precision", "recall", "mofe")},
    }
    if args.against:
        other = _load_estimates(args.against, parser)
        if len(other) != len(omegas):
            parser.error("--against group count does not match estimates")
        other_rows = _score(other, args.truth, parser, args.threshold)
        deltas = [
            {"group": a["group"], "mcc_delta": a["mcc"] - b["mcc"],
             "mofe_delta": a["mofe"] - b["mofe"]}
            for a, b in zip(rows, other_rows)
        ]
        payload["against"] = {
            "per_group": other_rows,
            "mean": {key: _mean(other_rows, key)
                     for key in ("mcc", "precision", "recall", "mofe")},
        }
        payload["delta"] = {
            "per_group": deltas,
            "mean_mcc_delta": float(np.mean([d["mcc_delta"] for d in deltas])),
        }
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_bench(args, parser) -> int:
    spec = simulate.GraphSpec(kind="er_shared", p=args.p,
                              n_groups=args.k_groups, s=0.6)
    result = simulate.simulate_dataset(spec, n=args.n, seed=args.seed)
    dataset = result.dataset
    hyper = Hyperparameters(v0=0.1, v1=1.0)
    backends = args.backends.split(",") if args.backends \
        else [_backend.BACKEND]
    thread_counts = [int(t) for t in args.threads_list.split(",")]

    out: dict = {"n": args.n, "p": args.p, "k_groups": args.k_groups,
                 "max_iter": args.max_iter, "runs": []}
    for backend_name in backends:
        impl = _backend.get_backend(backend_name)
        saved = (_backend.admm_batch, _backend.sigma2_batch,
                 _backend.glasso_cd)
        _backend.admm_batch = impl.admm_batch
        _backend.sigma2_batch = impl.sigma2_batch
        _backend.glasso_cd = impl.glasso_cd
        try:
            for threads in thread_counts:
                config = FitConfig(max_outer_iter=args.max_iter,
                                   outer_tol=1e-12, threads=threads)
                tic = time.perf_counter()
                engine.fit(dataset, hyper, config)
                elapsed = time.perf_counter() - tic
                out["runs"].append({
                    "backend": backend_name, "threads": threads,
                    "seconds": elapsed,
                })
        finally:
            (_backend.admm_batch, _backend.sigma2_batch,
             _backend.glasso_cd) = saved
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plnet",
        description="Simultaneous sparse network estimation for grouped "
                    "count data under a hierarchical Poisson log-normal "
                    "model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{simulate,fit,eval}")

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES),
                     help="graph family")
    sim.add_argument("--p", type=int, required=True, help="node count")
    sim.add_argument("--k-groups", type=int, required=True,
                     help="number of groups")
    sim.add_argument("--n", type=int, required=True,
                     help="observations per group")
    sim.add_argument("--s", type=float, required=True,
                     help="similarity (er) or signal strength (others)")
    sim.add_argument("--d", type=int, default=1,
                     help="covariate dimension (default 1)")
    sim.add_argument("--family", choices=("pln", "multinomial"),
                     default="pln", help="count sampler (default pln)")
    sim.add_argument("--seed", type=int, required=True, help="master seed")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="estimate precision matrices")
    fit.add_argument("data", help="dataset directory")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--v0", type=float, help="spike scale")
    fit.add_argument("--v1", type=float, help="slab scale")
    fit.add_argument("--grid", action="store_true",
                     help="search the default v0 grid "
                          "{0.1,0.25,0.5,1,5}*sqrt(K log p / sum n)")
    fit.add_argument("--ratio", type=float, default=10.0,
                     help="v1/v0 ratio for --grid (default 10)")
    fit.add_argument("--p0", type=float, default=0.5,
                     help="prior inclusion probability (default 0.5)")
    fit.add_argument("--tau", default="inf",
                     help="diagonal penalty scale (default inf = none)")
    fit.add_argument("--gamma", type=float, default=0.5,
                     help="EBIC model-space weight (default 0.5)")
    fit.add_argument("--rho", type=float, default=1.0,
                     help="ADMM step size (default 1)")
    fit.add_argument("--max-iter", type=int, default=100,
                     help="outer iteration cap (default 100)")
    fit.add_argument("--tol", type=float, default=1e-4,
                     help="outer convergence threshold (default 1e-4)")
    fit.add_argument("--threads", type=int, default=None,
                     help="worker threads (0 = all cores; "
                          "falls back to PLNET_THREADS)")
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score estimates against truth files")
    ev.add_argument("--estimates", required=True,
                    help="directory with omega_<k>.csv")
    ev.add_argument("--truth", required=True,
                    help="directory with truth_omega/truth_edges files")
    ev.add_argument("--against", default=None,
                    help="second estimates directory for a paired comparison")
    ev.add_argument("--threshold", type=float, default=1e-8,
                    help="edge threshold on |omega_ij| (default 1e-8)")
    ev.add_argument("--out", default=None, help="write the JSON report here")
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench")  # hidden: thread/backend timing
    bench.add_argument("--n", type=int, default=200)
    bench.add_argument("--p", type=int, default=40)
    bench.add_argument("--k-groups", type=int, default=10)
    bench.add_argument("--max-iter", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads-list", default="1,2,4")
    bench.add_argument("--backends", default=None,
                       help="comma list: c,python (default: active backend)")
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures exit 1, usage errors exit 2
        print(f"plnet: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
