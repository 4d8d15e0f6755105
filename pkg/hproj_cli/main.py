import hashlib
import json
import logging
import pathlib
import sys
import time
from argparse import ArgumentParser, Namespace
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import hproj
from hproj.calculate import checksum, default_workers
from hproj.codec import read_any, write_any
from hproj.householder import encode_chain, read_chain

logger = logging.getLogger("hproj")


@dataclass
class RunReport:
    """
    One report per run, written to stdout or to --report

    Args:
        subcommand: subcommand name
        inputs: sha256 digest of every input file
        parameters: effective parameters
        outputs: written paths and inline values
        wall_ms: wall clock time of the run
        version: hproj version
    """

    subcommand: str
    inputs: Dict[str, str] = field(default_factory=dict)
    parameters: Dict[str, object] = field(default_factory=dict)
    outputs: Dict[str, object] = field(default_factory=dict)
    wall_ms: float = 0.0
    version: str = hproj.HPROJ_VERSION

    def to_dict(self) -> dict:
        return asdict(self)


def canonical_report(report: dict) -> dict:
    """
    Copy of a report without wall clock fields, for determinism comparisons
    """
    if isinstance(report, dict):
        return {k: canonical_report(v) for k, v in report.items() if k not in hproj.TIMING_FIELDS}
    if isinstance(report, list):
        return [canonical_report(v) for v in report]
    return report


def digest(path: str) -> str:
    return hashlib.sha256(pathlib.Path(path).read_bytes()).hexdigest()


def floats(text: str) -> List[float]:
    """comma separated numbers"""
    return [float(x) for x in text.split(",") if x.strip()]


def ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def load_generator(path: str) -> Tuple[Callable[[np.ndarray], np.ndarray], np.ndarray, int]:
    """
    Linear generator of a weight file

    Returns:
        the generator, its dense weight and the number of directions that carry variation
    """
    if pathlib.Path(path).suffix == hproj.CONTAINER_SUFFIX:
        p = hproj.projector_load(path)
        return (lambda z: hproj.projector_apply(p, z)), hproj.projector_forward(p), p.rank
    a = read_any(path)
    return (lambda z: a @ z), a, min(a.shape)


def load_directions(args: Namespace, report: RunReport, weight: np.ndarray, top: int) -> hproj.DirectionSet:
    if args.directions:
        report.inputs[args.directions] = digest(args.directions)
        return hproj.DirectionSet(read_any(args.directions))
    return hproj.sefa_directions(weight, top)


def make_distance(name: str, dim: int, seed: int):
    if name == "mse":
        return hproj.mse_distance
    if name == "random-projection":
        return hproj.RandomProjectionDistance(dim, seed=seed)
    return hproj.squared_l2_distance


def cmd_init(args: Namespace, report: RunReport) -> None:
    if args.source:
        report.inputs[args.source] = digest(args.source)
        a = read_any(args.source)
        if a.shape != (args.rows, args.cols):
            shape = f"{a.shape[0]}x{a.shape[1]}"
            raise hproj.ShapeError(f"{args.source} holds a {shape} matrix, expected {args.rows}x{args.cols}")
        p = hproj.projector_from_pretrained(a, args.rank, truncated=args.truncated)
    else:
        p = hproj.projector_new(args.rows, args.cols, args.rank, seed=args.seed, truncated=args.truncated)
    hproj.projector_save(p, args.output)
    report.parameters.update(rows=args.rows, cols=args.cols, rank=args.rank, seed=args.seed, truncated=args.truncated)
    report.outputs.update(path=args.output, spectral_error=hproj.spectral_error(p))


def cmd_decompose(args: Namespace, report: RunReport) -> None:
    report.inputs[args.matrix] = digest(args.matrix)
    m = read_any(args.matrix)
    chain = hproj.decompose_orthogonal(m)
    encode_chain(chain, path=args.output)
    error = hproj.frobenius_norm(hproj.chain_accumulate(chain) - m)
    report.outputs.update(
        path=args.output,
        reflectors=chain.count,
        identity=int(chain.identity.sum()),
        reconstruction_error=error,
    )


def cmd_reconstruct(args: Namespace, report: RunReport) -> None:
    report.inputs[args.source] = digest(args.source)
    if pathlib.Path(args.source).suffix == hproj.CONTAINER_SUFFIX:
        a = hproj.projector_forward(hproj.projector_load(args.source), args.workers)
    else:
        a = hproj.accumulate(read_chain(args.source), args.method, args.workers)
    write_any(a, args.output)
    report.parameters.update(method=args.method, workers=args.workers)
    report.outputs.update(path=args.output, rows=a.shape[0], cols=a.shape[1], checksum=checksum(a))


def cmd_nearest_orth(args: Namespace, report: RunReport) -> None:
    report.inputs[args.matrix] = digest(args.matrix)
    a = read_any(args.matrix)
    r = hproj.nearest_orthogonal(a)
    write_any(r, args.output)
    report.outputs.update(path=args.output, distance=hproj.orthogonal_distance(a))


def cmd_discover(args: Namespace, report: RunReport) -> None:
    report.inputs[args.source] = digest(args.source)
    _, weight, _ = load_generator(args.source)
    directions = hproj.sefa_directions(weight, args.top)
    report.parameters.update(top=args.top)
    report.outputs.update(
        magnitudes=[float(x) for x in directions.magnitudes],
        clusters=hproj.eigen_clusters(directions),
    )
    if args.output:
        write_any(directions.directions, args.output)
        report.outputs.update(path=args.output)
    else:
        report.outputs.update(directions=directions.directions.T.tolist())


def cmd_traverse(args: Namespace, report: RunReport) -> None:
    report.inputs[args.proj] = digest(args.proj)
    g, weight, top = load_generator(args.proj)
    directions = load_directions(args, report, weight, top)
    if args.z:
        report.inputs[args.z] = digest(args.z)
        z = read_any(args.z).reshape(-1)
    else:
        z = np.random.default_rng(args.seed).standard_normal(weight.shape[1])
    spec = hproj.TraversalSpec(args.dir_index, args.alphas, z)
    outputs = np.array(hproj.traverse(g, spec, directions))
    report.parameters.update(dir_index=args.dir_index, alphas=list(spec.strengths), seed=args.seed)
    if args.output:
        write_any(outputs, args.output)
        report.outputs.update(path=args.output, checksum=checksum(outputs))
    else:
        report.outputs.update(outputs=outputs.tolist())


def cmd_metrics(args: Namespace, report: RunReport) -> None:
    if args.metric == "fid":
        report.inputs[args.real] = digest(args.real)
        report.inputs[args.fake] = digest(args.fake)
        real = hproj.GaussianStats.from_samples(read_any(args.real))
        fake = hproj.GaussianStats.from_samples(read_any(args.fake))
        report.outputs.update(value=hproj.frechet_distance(real, fake))
        return
    if args.metric == "pearson":
        report.parameters.update(steps=args.steps, preds=args.preds)
        report.outputs.update(value=hproj.pearson_correlation(args.steps, args.preds))
        return

    report.inputs[args.proj] = digest(args.proj)
    g, weight, top = load_generator(args.proj)
    dist = make_distance(args.distance, weight.shape[0], args.seed)
    report.parameters.update(distance=args.distance, workers=args.workers)
    if args.metric == "ppl":
        eps = hproj.PPL_EPS if args.eps is None else args.eps
        result = hproj.ppl(g, dist, weight.shape[1], eps, args.samples, args.seed, args.workers)
    else:
        eps = hproj.PIPL_EPS if args.eps is None else args.eps
        directions = load_directions(args, report, weight, top)
        report.parameters.update(directions=args.directions or f"sefa top {top}")
        result = hproj.pipl(g, dist, directions, eps, args.samples, args.seed, args.workers)
    report.outputs.update(result.to_dict())


def cmd_bench(args: Namespace, report: RunReport) -> None:
    bench = hproj.bench_accumulation(args.dim, args.count, args.method, args.workers, args.reps, args.seed)
    report.parameters.update(
        dim=args.dim, count=args.count, method=args.method, workers=args.workers, reps=args.reps, seed=args.seed
    )
    report.outputs.update(bench.to_dict())


def cmd_toy_train(args: Namespace, report: RunReport) -> None:
    gt = hproj.make_ground_truth(args.dim, args.factors, args.out_dim, seed=args.seed, noise=args.noise)
    cfg = hproj.TrainConfig(
        seed=args.seed,
        steps=args.steps,
        lr=args.lr,
        batch_size=args.batch_size,
        rank=args.rank,
        init=args.init,
        layer=args.layer,
        hidden_dims=tuple(args.hidden_dims),
        nonlinearity=args.nonlinearity,
        head=not args.no_head,
    )
    g, history = hproj.train_toy(gt, cfg)
    recovery = hproj.evaluate_recovery(g, gt)
    run = {
        "config": cfg.to_dict(),
        "factors": {"dim": args.dim, "n_true": args.factors, "out_dim": args.out_dim, "noise": args.noise},
        "history": history.to_dict(),
        "recovery": recovery.to_dict(),
    }
    report.parameters.update(run["config"], dim=args.dim, factors=args.factors, out_dim=args.out_dim, noise=args.noise)
    report.outputs.update(
        initial_loss=history.loss[0],
        final_loss=history.loss[-1],
        max_orthogonality_error=max(history.orthogonality, default=None),
        max_spectral_error=max(history.spectral, default=None),
        recovery_mean=recovery.mean,
    )
    if args.output:
        pathlib.Path(args.output).write_text(json.dumps(run, sort_keys=True))
        report.outputs.update(path=args.output)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="hproj", description="Householder low-rank orthogonal projectors")
    parser.add_argument("--pretty", action="store_true", help="Print a human readable table instead of JSON")
    parser.add_argument("--report", type=str, help="Write the run report to this path instead of stdout")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def workers_arg(p: ArgumentParser) -> None:
        p.add_argument(
            "--workers",
            type=int,
            default=default_workers(),
            help=f"Worker threads, default ${hproj.ENV_WORKERS} or 1",
        )

    p = sub.add_parser("init", help="Create a projector container")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rank", type=int, default=hproj.DEFAULT_RANK)
    p.add_argument("--from", dest="source", type=str, help="Pretrained weight for nearest-orthogonal init")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truncated", action="store_true", help="Store only rank reflectors per side")
    p.add_argument("-o", "--output", type=str, required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("decompose", help="Decompose an orthogonal matrix into reflectors")
    p.add_argument("matrix", type=str)
    p.add_argument("-o", "--output", type=str, required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="Accumulate a reflector chain or projector to a dense matrix")
    p.add_argument("source", type=str, help="Reflector chain (.matf) or projector (.hproj)")
    p.add_argument("--method", choices=hproj.METHODS, default=hproj.METHOD_WY)
    workers_arg(p)
    p.add_argument("-o", "--output", type=str, required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("nearest-orth", help="Nearest (semi-)orthogonal matrix")
    p.add_argument("matrix", type=str)
    p.add_argument("-o", "--output", type=str, required=True)
    p.set_defaults(func=cmd_nearest_orth)

    p = sub.add_parser("discover", help="Closed-form latent directions of a weight")
    p.add_argument("source", type=str, help="Weight matrix or projector (.hproj)")
    p.add_argument("--top", type=int, default=None, help="Number of directions, all by default")
    p.add_argument("-o", "--output", type=str, help="Write directions as columns of a matrix")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("traverse", help="Outputs along one direction")
    p.add_argument("--proj", type=str, required=True, help="Weight matrix or projector (.hproj)")
    p.add_argument("--dir-index", type=int, default=0)
    p.add_argument("--alphas", type=floats, default=list(hproj.ALPHA_GRID), help="Comma separated strengths")
    p.add_argument("--directions", type=str, help="Direction matrix, closed-form directions by default")
    p.add_argument("--z", type=str, help="Base latent, drawn from --seed by default")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=str)
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("metrics", help="ppl | pipl | fid | pearson")
    metrics = p.add_subparsers(dest="metric", required=True, metavar="metric")
    for name in ("ppl", "pipl"):
        m = metrics.add_parser(name)
        m.add_argument("--proj", type=str, required=True, help="Weight matrix or projector (.hproj)")
        m.add_argument(
            "--eps",
            type=float,
            default=None,
            help=f"ppl {hproj.PPL_EPS}, pipl {hproj.PIPL_EPS} by default ({hproj.PIPL_EPS_STRONG} for coarse latents)",
        )
        m.add_argument("--samples", type=int, default=hproj.METRIC_SAMPLES)
        m.add_argument("--seed", type=int, default=0)
        m.add_argument("--distance", choices=("sq-l2", "mse", "random-projection"), default="sq-l2")
        workers_arg(m)
        if name == "pipl":
            m.add_argument("--directions", type=str, help="Direction matrix, closed-form directions by default")
        m.set_defaults(func=cmd_metrics)
    m = metrics.add_parser("fid")
    m.add_argument("--real", type=str, required=True, help="Samples, one per row")
    m.add_argument("--fake", type=str, required=True, help="Samples, one per row")
    m.set_defaults(func=cmd_metrics)
    m = metrics.add_parser("pearson")
    m.add_argument("--steps", type=floats, required=True)
    m.add_argument("--preds", type=floats, required=True)
    m.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="Time dense accumulation of a random chain")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--method", choices=hproj.METHODS, default=hproj.METHOD_WY)
    workers_arg(p)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("toy-train", help="Train the toy generator")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--factors", type=int, default=3)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--out-dim", type=int, default=hproj.TOY_OUT_DIM)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=0, help="0 for full batch")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--hidden-dims", type=ints, default=[])
    p.add_argument("--nonlinearity", choices=hproj.NONLINEARITIES, default=hproj.NONLINEARITY_IDENTITY)
    p.add_argument("--no-head", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=hproj.INITS, default=hproj.INIT_RANDOM)
    p.add_argument(
        "--layer",
        choices=hproj.LAYERS,
        default=hproj.LAYER_PROJECTOR,
        help="First-layer weight, dense trains the unconstrained baseline",
    )
    p.add_argument("-o", "--output", type=str)
    p.set_defaults(func=cmd_toy_train)
    return parser


def render(report: dict) -> str:
    """key: value table of a report"""
    lines = []

    def walk(prefix: str, value) -> None:
        if isinstance(value, dict):
            for k in value:
                walk(f"{prefix}.{k}" if prefix else k, value[k])
        else:
            lines.append(f"{prefix:<32} {value}")

    walk("", report)
    return "\n".join(lines)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 1 on a domain or validation error, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(logging.DEBUG if args.verbose else logging.WARNING)

    report = RunReport(args.command if args.command != "metrics" else f"metrics {args.metric}")
    start = time.perf_counter()
    try:
        args.func(args, report)
    except (hproj.HprojError, ValueError, AssertionError, OSError) as e:
        print(f"hproj: error: {e}", file=sys.stderr)
        return 1
    report.wall_ms = (time.perf_counter() - start) * 1000.0

    data = report.to_dict()
    text = render(data) if args.pretty else json.dumps(data, sort_keys=True)
    if args.report:
        pathlib.Path(args.report).write_text(text + "\n")
    else:
        print(text)
    return 0


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
