import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from hybrid_cnn.analysis import fold_assignment, summarize_fold, tie_network, verify_fold_equivalence
from hybrid_cnn.core import run_gradcheck_suite
from hybrid_cnn.errors import ConfigValidationError, DimensionError, HybridCNNError, UsageError
from hybrid_cnn.models import PER_LAYER, build_shortest_path_model, build_wrn_cifar_spec, count_params
from hybrid_cnn.sharing import compute_lsm
from hybrid_cnn.tasks import CurriculumSpec, GridDataset, generate_dataset, read_dataset, write_dataset
from hybrid_cnn.training import (
    RunConfig,
    compare_models,
    evaluate,
    load_checkpoint,
    network_from_checkpoint,
    summarize_comparison,
    train_curriculum,
)
from hybrid_cnn.utils import folded_graph_dot, setup_logging, write_dot, write_lsm_csv, write_pgm

logger = logging.getLogger("hybrid_cnn.cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the validation exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _templates_arg(value: str):
    if value == PER_LAYER:
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or '{PER_LAYER}', got {value!r}")


def _load_network(path: str):
    return network_from_checkpoint(load_checkpoint(path))


def _select_groups(network, group: Optional[str]) -> List[str]:
    if not network.groups:
        raise UsageError("checkpoint has no sharing groups")
    if group is None:
        return list(network.groups)
    if group not in network.groups:
        raise UsageError(f"unknown group '{group}', available: {sorted(network.groups)}")
    return [group]


def _pick_probes(examples: list, count: int, seed: int) -> list:
    """All examples when there are at most `count`, else a seeded sample in file order."""
    if count < 1:
        raise UsageError(f"--probe-count must be >= 1, got {count}")
    if len(examples) <= count:
        return examples
    chosen = np.random.default_rng(seed).choice(len(examples), size=count, replace=False)
    return [examples[i] for i in sorted(chosen)]


def cmd_gen_data(args) -> int:
    curriculum = CurriculumSpec(grid=args.grid, obstacle_p=args.obstacle_p)
    curriculum.check_phase(args.phase)
    examples = generate_dataset(
        args.phase,
        args.count,
        seed=args.seed,
        grid=args.grid,
        obstacle_p=args.obstacle_p,
        threads=args.threads,
        curriculum=curriculum,
    )
    write_dataset(args.out, examples, (args.grid, args.grid))
    density = float(np.mean([e.label.mean() for e in examples])) if examples else 0.0
    print(f"examples: {len(examples)}")
    print(f"mean label density: {density:.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    changes = {"threads": args.threads} if args.threads_given else {}
    if args.seed_given:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    config = config.replace(**changes)
    artifacts = train_curriculum(config, resume=args.resume)
    last = artifacts.metrics.iloc[-1]
    print(f"metrics: {artifacts.metrics_path}")
    print(f"final checkpoint: {artifacts.checkpoints[-1]}")
    print(f"final val_f1: {last['val_f1']:.6f}")
    if artifacts.lsm:
        print(f"final lsm_offdiag_mean: {last['lsm_offdiag_mean']:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    network = _load_network(args.ckpt)
    dataset = GridDataset.from_examples(read_dataset(args.data))
    f1, loss = evaluate(network, dataset, batch_size=args.batch_size, threads=args.threads)
    print(f"examples: {len(dataset)}")
    print(f"f1: {f1:.6f}")
    print(f"bce: {loss:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck_suite(seed=args.seed, eps=args.eps, rtol=args.rtol)
    for result in report.results:
        status = "ok" if result.passed else "FAIL"
        print(f"{status:4s} {result.name:45s} rel_err={result.max_rel_error:.3e}")
    print(f"worst relative error: {report.worst:.3e}")
    if not report.passed:
        logger.error(f"{len(report.failures())} gradient checks exceed rtol={args.rtol}")
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_lsm(args) -> int:
    network = _load_network(args.ckpt)
    groups = _select_groups(network, args.group)
    if len(groups) > 1 and (args.out_csv or args.out_pgm):
        raise UsageError(f"checkpoint has {len(groups)} groups; pick one with --group")
    for group_id in groups:
        lsm = compute_lsm(network.groups[group_id].coefficients, group_id)
        print(f"group {group_id}: L={lsm.num_layers} offdiag_mean={lsm.offdiag_mean():.6f} offdiag_min={lsm.offdiag_min():.6f}")
        if args.out_csv:
            write_lsm_csv(lsm.values, args.out_csv)
        if args.out_pgm:
            write_pgm(lsm.values, args.out_pgm)
    return EXIT_OK


def cmd_fold(args) -> int:
    network = _load_network(args.ckpt)
    groups = _select_groups(network, args.group)
    if len(groups) > 1 and args.out_dot:
        raise UsageError(f"checkpoint has {len(groups)} groups; pick one with --group")
    tied, assignments = tie_network(network, args.tau, groups)
    for group_id in groups:
        assignment = assignments[group_id]
        tied.fold_signs(assignment)
        graph = fold_assignment(assignment)
        summary = summarize_fold(tied.groups[group_id], assignment, graph)
        print(f"group {group_id}: tau={args.tau}")
        for key, value in summary.as_dict().items():
            print(f"  {key}: {value}")
        print("  sequence: " + " ".join(str(c) for c in assignment.sequence()))
        if args.out_dot:
            members = {i + 1: layers for i, layers in enumerate(assignment.clusters().values())}
            write_dot(folded_graph_dot(graph, members, name=group_id), args.out_dot)
    if args.probe_data:
        probes = _pick_probes(read_dataset(args.probe_data), args.probe_count, args.seed)
        dataset = GridDataset.from_examples(probes)
        report = verify_fold_equivalence(
            network, tied, dataset.inputs, dataset.labels, threads=args.threads
        )
        for key, value in report.as_dict().items():
            print(f"{key}: {value}")
    return EXIT_OK


def cmd_count_params(args) -> int:
    if args.arch in ("wrn", "swrn"):
        spec = build_wrn_cifar_spec(
            args.depth, args.widen, templates=args.templates, shared=args.arch == "swrn"
        )
    else:
        templates = None if args.templates == PER_LAYER else args.templates
        spec = build_shortest_path_model(args.arch == "scnn", args.depth, args.width, templates=templates)
    report = count_params(spec)
    print(f"architecture: {spec.name}")
    for key, value in report.as_dict().items():
        print(f"{key}: {value}")
    print(f"total_millions: {report.total_millions:.1f}M")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = RunConfig.from_json(args.config)
    if args.threads_given:
        config = config.replace(threads=args.threads)
    out_dir = Path(args.out_dir)
    seeds = args.seeds if args.seeds is not None else [args.seed + i for i in range(3)]
    runs = compare_models(config, seeds, out_dir, lambda_r=args.lambda_r)
    summary = summarize_comparison(runs)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs.to_csv(out_dir / "runs.csv", index=False, float_format="%.10g")
    summary.to_csv(out_dir / "summary.csv", index=False, float_format="%.10g")
    print(summary.to_string(index=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hybrid-cnn",
        description="Soft parameter sharing for CNNs: training, similarity analysis and folding.",
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="Worker threads (default: 1, or the config value)."
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Global seed (default: 0). Overrides the config seed of train, starts the compare seed list "
        "and picks the fold probes; eval is deterministic and ignores it.",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Enable verbose logging (DEBUG level).",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed_kwargs = dict(type=int, default=argparse.SUPPRESS, help="Overrides the global --seed.")

    p = sub.add_parser("gen-data", help="Generate a shortest-path dataset file.")
    p.add_argument("--phase", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--obstacle-p", type=float, default=0.1)
    p.add_argument("--seed", **seed_kwargs)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Run curriculum training from a JSON config.")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="Phase checkpoint to continue from.")
    p.add_argument("--out-dir", default=None, help="Overrides out_dir of the config.")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="F1 of a checkpoint on a dataset file.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every primitive.")
    p.add_argument("--seed", **seed_kwargs)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("lsm", help="Export the layer similarity matrix of a checkpoint.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-pgm", default=None)
    p.set_defaults(func=cmd_lsm)

    p = sub.add_parser("fold", help="Tie similar layers and emit the folded graph.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--out-dot", default=None)
    p.add_argument("--probe-data", default=None)
    p.add_argument("--probe-count", type=int, default=100)
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("count-params", help="Exact parameter count of an architecture.")
    p.add_argument("--arch", choices=["wrn", "swrn", "scnn", "cnn"], required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--widen", type=int, default=1)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--templates", type=_templates_arg, default=PER_LAYER)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("compare", help="Train CNN, SCNN and regularised SCNN over several seeds.")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="Default: --seed, --seed + 1, --seed + 2.")
    p.add_argument("--lambda-r", type=float, default=0.01)
    p.add_argument("--out-dir", default="runs/compare")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main function executed by the command-line entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(level=logging.DEBUG if args.verbose else logging.INFO)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Verbose logging enabled.")
    args.seed_given = args.seed is not None
    if not args.seed_given:
        args.seed = 0
    args.threads_given = args.threads is not None
    if not args.threads_given:
        args.threads = 1
    if args.threads < 1:
        logger.error(f"--threads must be >= 1, got {args.threads}")
        return EXIT_VALIDATION

    try:
        return args.func(args)
    except ConfigValidationError as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except (UsageError, DimensionError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_VALIDATION
    except (HybridCNNError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except Exception:
        logger.exception(f"{args.command} failed with an unexpected error")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
