"""Command line front end.

Every command prints its effective configuration as a single sorted
`config:` line before doing anything, so runs are reproducible from logs
alone.  Exit codes: 0 success / check passed, 1 failing check or diverged
training, 2 usage or file-format errors.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io
from .graph import (ManifoldGraph, build_graph, default_knn, fixed_lambda_max,
                    laplacian, make_metric, power_lambda_max, sample_edges,
                    sample_vertices, slice_neighbor_fractions)
from .network import TrainingDiverged, train_demo
from .sampling import GridKind, GridSpec, build_vertices
from .spectral import (eigensystem, equivariance_error, heat_diffuse,
                       rotation_permutation, slice_anisotropy)

EQUIVARIANCE_TOL = 1e-9

_KIND_NAMES = {
    "se2": GridKind.SE2_GRID,
    "so3": GridKind.SO3_ICOSAHEDRAL,
    "r2": GridKind.R2_GRID,
    "s2": GridKind.S2_ICOSAHEDRAL,
}


def _print_config(command: str, args: dict) -> None:
    pairs = " ".join(f"{k}={v}" for k, v in sorted(args.items()) if v is not None)
    print(f"config: command={command} {pairs}")


def _graph_summary(graph: ManifoldGraph, lambda_max: float | None) -> None:
    spec = graph.vertices.spec
    print(f"kind: {spec.kind.value}")
    if spec.kind in (GridKind.SE2_GRID, GridKind.R2_GRID):
        print(f"sampling: {spec.nx}x{spec.ny} grid, {spec.n_orient} orientation slice(s)")
    else:
        print(f"sampling: icosahedral level {spec.level}, {spec.n_orient} orientation slice(s)")
    print(f"vertices: {graph.n_vertices}")
    print(f"edges: {graph.n_edges}")
    print(f"knn: {graph.knn}")
    print(f"metric: epsilon={graph.metric.epsilon:.12g} xi={graph.metric.xi:.12g} "
          f"alpha={graph.alpha:.12g}")
    print(f"bandwidth: {graph.bandwidth:.12g}")
    if lambda_max is not None:
        print(f"lambda_max: {lambda_max:.12g}")
    in_f, cross_f = slice_neighbor_fractions(graph)
    print(f"neighbors: {in_f:.3f} in-slice / {cross_f:.3f} cross-slice")
    for note in graph.notes:
        print(f"note: {note}")


def cmd_build_graph(args) -> int:
    kind = _KIND_NAMES[args.kind]
    if kind in (GridKind.SE2_GRID, GridKind.R2_GRID):
        if args.nx is None:
            raise ValueError("planar grids need --nx")
        ny = args.ny if args.ny is not None else args.nx
        n_orient = args.orient if kind is GridKind.SE2_GRID else 1
        if kind is GridKind.SE2_GRID and args.orient is None:
            raise ValueError("se2 grids need --orient")
        spec = GridSpec(kind, nx=args.nx, ny=ny, n_orient=n_orient)
    else:
        if args.level is None:
            raise ValueError("icosahedral samplings need --level")
        n_orient = args.orient if kind is GridKind.SO3_ICOSAHEDRAL else 1
        if kind is GridKind.SO3_ICOSAHEDRAL and args.orient is None:
            raise ValueError("so3 samplings need --orient")
        spec = GridSpec(kind, level=args.level, n_orient=n_orient)

    isotropic = kind in (GridKind.R2_GRID, GridKind.S2_ICOSAHEDRAL)
    if isotropic:
        if args.epsilon is not None or args.alpha is not None or args.xi is not None:
            raise ValueError(f"{args.kind} graphs are isotropic; metric flags not allowed")
        metric, alpha = make_metric(spec)
    else:
        if args.alpha is not None and args.xi is not None:
            raise ValueError("give either --alpha or --xi, not both")
        alpha_in = args.alpha if (args.alpha is not None or args.xi is not None) else 1.0
        metric, alpha = make_metric(spec, epsilon=args.epsilon or 1.0,
                                    alpha=alpha_in, xi=args.xi)
    knn = args.knn if args.knn is not None else default_knn(spec)

    _print_config("build-graph", {
        "kind": args.kind, "nx": spec.nx or None, "ny": spec.ny or None,
        "level": spec.level if not spec.kind in (GridKind.SE2_GRID, GridKind.R2_GRID) else None,
        "orient": spec.n_orient, "epsilon": f"{metric.epsilon:.12g}",
        "xi": f"{metric.xi:.12g}", "alpha": f"{alpha:.12g}", "knn": knn,
        "lambda_max": args.lambda_max, "out": args.out,
    })

    vertices = build_vertices(spec)
    graph = build_graph(vertices, metric, knn, alpha=alpha)
    lap = laplacian(graph)
    lap = fixed_lambda_max(lap) if args.lambda_max == "fixed2" else power_lambda_max(lap)
    io.write_graph(args.out, graph, lap)
    _graph_summary(graph, lap.lambda_max)
    print(f"wrote {args.out}")
    return 0


def cmd_info(args) -> int:
    _print_config("info", {"graph": args.graph})
    graph, lap = io.read_graph(args.graph)
    _graph_summary(graph, lap.lambda_max if lap is not None else None)
    if lap is None:
        print("laplacian: not stored")
    return 0


def cmd_eigenmaps(args) -> int:
    _print_config("eigenmaps", {"graph": args.graph, "k": args.k, "out": args.out})
    graph, lap = io.read_graph(args.graph)
    if lap is None:
        lap = power_lambda_max(laplacian(graph))
    eig = eigensystem(lap, args.k)
    io.write_eigenmaps_csv(args.out, eig.values, eig.vectors)
    sidecar = _sidecar(args.out)
    io.write_signal(sidecar, eig.vectors)
    print(f"eigenvalues: {' '.join(f'{v:.6g}' for v in eig.values)}")
    print(f"wrote {args.out} and {sidecar}")
    return 0


def _sidecar(csv_path: str) -> str:
    base = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    return base + ".clsg"


def cmd_diffuse(args) -> int:
    _print_config("diffuse", {"graph": args.graph, "impulse": args.impulse,
                              "signal": args.signal, "tau": args.tau,
                              "order": args.order, "out": args.out})
    graph, lap = io.read_graph(args.graph)
    if lap is None:
        lap = power_lambda_max(laplacian(graph))
    if (args.impulse is None) == (args.signal is None):
        raise ValueError("give exactly one of --impulse or --signal")
    if args.impulse is not None:
        if not 0 <= args.impulse < graph.n_vertices:
            raise ValueError(f"impulse vertex {args.impulse} out of range")
        x = np.zeros(graph.n_vertices)
        x[args.impulse] = 1.0
    else:
        x = io.read_signal(args.signal)
        if x.shape[0] != graph.n_vertices:
            raise ValueError("signal length does not match the graph")
    y = heat_diffuse(lap, x, args.tau, args.order)
    io.write_field_csv(args.out, graph.vertices, y)
    sidecar = _sidecar(args.out)
    io.write_signal(sidecar, y)
    flat = y if y.ndim == 1 else y[:, 0]
    for entry in slice_anisotropy(graph.vertices, flat):
        print(f"slice {entry['slice']} (theta={entry['theta']:.4f}): "
              f"mass={entry['mass']:.6g} along={entry['var_along']:.6g} "
              f"across={entry['var_across']:.6g} ratio={entry['ratio']:.4f}")
    print(f"wrote {args.out} and {sidecar}")
    return 0


def cmd_check_equivariance(args) -> int:
    _print_config("check-equivariance",
                  {"graph": args.graph, "quarter_turns": args.quarter_turns})
    graph, lap = io.read_graph(args.graph)
    if lap is None:
        lap = laplacian(graph)
    perm = rotation_permutation(graph.vertices.spec, args.quarter_turns)
    err = equivariance_error(lap.matrix, perm)
    print(f"equivariance error: {err:.6e} (tolerance {EQUIVARIANCE_TOL:.0e})")
    if err <= EQUIVARIANCE_TOL:
        print("PASS")
        return 0
    print("FAIL")
    return 1


def cmd_sample(args) -> int:
    if (args.edges is None) == (args.vertices is None):
        raise ValueError("give exactly one of --edges or --vertices")
    _print_config("sample", {"graph": args.graph, "edges": args.edges,
                             "vertices": args.vertices, "seed": args.seed,
                             "out": args.out})
    graph, _ = io.read_graph(args.graph)
    if args.edges is not None:
        sub = sample_edges(graph, args.edges, args.seed)
    else:
        sub = sample_vertices(graph, args.vertices, args.seed)
    lap = power_lambda_max(laplacian(sub))
    io.write_graph(args.out, sub, lap)
    _graph_summary(sub, lap.lambda_max)
    print(f"wrote {args.out}")
    return 0


def cmd_train_demo(args) -> int:
    _print_config("train-demo", {"epochs": args.epochs, "lr": args.lr,
                                 "seed": args.seed, "metrics": args.metrics,
                                 "checkpoint": args.checkpoint})
    rows, setup = train_demo(epochs=args.epochs, lr=args.lr, seed=args.seed)
    if args.metrics:
        with open(args.metrics, "w", newline="\n") as fh:
            fh.write("epoch,loss,accuracy,rotation_consistency\n")
            for row in rows:
                fh.write(f"{row['epoch']},{row['loss']:.17g},{row['accuracy']:.17g},"
                         f"{row['rotation_consistency']:.17g}\n")
    if args.checkpoint:
        io.write_model(args.checkpoint, setup.model)
    for row in rows:
        print(f"epoch {row['epoch']:3d}: loss={row['loss']:.4f} "
              f"accuracy={row['accuracy']:.4f} "
              f"rotation_consistency={row['rotation_consistency']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liegraph",
                                description="Anisotropic manifold graphs on SE(2) and SO(3)")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-graph", help="sample a grid and build its K-NN graph")
    b.add_argument("--kind", choices=sorted(_KIND_NAMES), required=True)
    b.add_argument("--nx", type=int)
    b.add_argument("--ny", type=int)
    b.add_argument("--level", type=int)
    b.add_argument("--orient", type=int)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--alpha", type=float)
    b.add_argument("--xi", type=float)
    b.add_argument("--knn", type=int)
    b.add_argument("--lambda-max", choices=["power", "fixed2"], default="power")
    b.add_argument("--out", default="graph.clgr")
    b.set_defaults(fn=cmd_build_graph)

    i = sub.add_parser("info", help="summarize a stored graph")
    i.add_argument("graph")
    i.set_defaults(fn=cmd_info)

    e = sub.add_parser("eigenmaps", help="export the smallest eigenpairs")
    e.add_argument("--graph", required=True)
    e.add_argument("--k", type=int, default=16)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eigenmaps)

    d = sub.add_parser("diffuse", help="heat diffusion of an impulse or signal")
    d.add_argument("--graph", required=True)
    d.add_argument("--impulse", type=int)
    d.add_argument("--signal")
    d.add_argument("--tau", type=float, required=True)
    d.add_argument("--order", type=int, default=30)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_diffuse)

    c = sub.add_parser("check-equivariance", help="audit the quarter-turn symmetry")
    c.add_argument("--graph", required=True)
    c.add_argument("--quarter-turns", type=int, default=1)
    c.set_defaults(fn=cmd_check_equivariance)

    s = sub.add_parser("sample", help="random sub-graph (edge or vertex sampling)")
    s.add_argument("--graph", required=True)
    s.add_argument("--edges", type=float)
    s.add_argument("--vertices", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    t = sub.add_parser("train-demo", help="train the oriented-bar classifier")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--metrics")
    t.add_argument("--checkpoint")
    t.set_defaults(fn=cmd_train_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except io.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
