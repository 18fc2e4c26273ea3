"""Command-line entry point.

Subcommands: gen-synth, condense, eval, baseline-random. Every run writes a
run_manifest.json next to its outputs. Exit codes: 0 success, 2 usage error,
3 numerical abort, 4 incompatible inputs.

Environment:
  MMGC_THREADS     caps BLAS thread pools (default 1, for bitwise determinism)
  MMGC_NUMBA       set to 0 to force the pure-numpy kernel fallbacks
  MMGC_WALL_CLOCK  set to 1 to record real per-step wall times in
                   metrics.jsonl (off by default so repeated runs produce
                   byte-identical files)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_INCOMPATIBLE = 4


def _cap_threads():
    limit = int(os.environ.get("MMGC_THREADS", "1"))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=limit)
    except Exception:  # pragma: no cover - limiter is best-effort
        pass
    return limit


def _include_wall() -> bool:
    return os.environ.get("MMGC_WALL_CLOCK", "0").strip().lower() in ("1", "true", "on")


def _prepare_out(path: Path, force: bool):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise FileExistsError(
                f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmgc",
        description="Multimodal graph condensation by structurally-regularized "
                    "gradient matching.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synth", help="generate a synthetic multimodal dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--nodes", type=int, default=2000)
    gen.add_argument("--classes", type=int, default=4)
    gen.add_argument("--d-text", type=int, default=32)
    gen.add_argument("--d-image", type=int, default=32)
    gen.add_argument("--p-in", type=float, default=0.05)
    gen.add_argument("--p-out", type=float, default=0.005)
    gen.add_argument("--conflict", type=float, default=0.6,
                     help="probability a node's image features follow another class")
    gen.add_argument("--noise", type=float, default=0.3)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--force", action="store_true")

    con = sub.add_parser("condense", help="condense a dataset")
    con.add_argument("--data", required=True)
    con.add_argument("--out", required=True)
    con.add_argument("--ratio", type=float, default=0.01)
    con.add_argument("--lambda", dest="lam", type=float, default=500.0)
    con.add_argument("--mode", choices=["srgm", "no-decouple",
                                        "no-decouple-no-damp", "damp-detached"],
                     default="srgm")
    con.add_argument("--outer", type=int, default=20)
    con.add_argument("--inner", type=int, default=10)
    con.add_argument("--lr-feat", type=float, default=1e-2)
    con.add_argument("--lr-phi", type=float, default=1e-3)
    con.add_argument("--lr-theta", type=float, default=1e-2)
    con.add_argument("--seed", type=int, default=0)
    con.add_argument("--threshold", type=float, default=0.5,
                     help="evaluation-time edge sparsification cutoff")
    con.add_argument("--hidden", type=int, default=256)
    con.add_argument("--phi-hidden", type=int, default=128)
    con.add_argument("--force", action="store_true")

    ev = sub.add_parser("eval", help="train on a condensed graph, test on the original")
    ev.add_argument("--condensed", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--model", choices=["gcn", "sage", "mlp"], default="gcn",
                    help="mlp ignores the condensed adjacency (and any "
                         "--threshold used to produce it) entirely")
    ev.add_argument("--runs", type=int, default=5)
    ev.add_argument("--epochs", type=int, default=600)
    ev.add_argument("--lr", type=float, default=1e-2)
    ev.add_argument("--weight-decay", type=float, default=5e-4)
    ev.add_argument("--hidden", type=int, default=256)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--inductive", action="store_true")
    ev.add_argument("--force", action="store_true")

    base = sub.add_parser("baseline-random",
                          help="class-stratified random coreset baseline")
    base.add_argument("--data", required=True)
    base.add_argument("--out", required=True)
    base.add_argument("--ratio", type=float, default=0.01)
    base.add_argument("--seed", type=int, default=0)
    base.add_argument("--force", action="store_true")
    return parser


def _cmd_gen_synth(args) -> int:
    from .data import SynthGenParams, generate_synthetic, save_dataset
    from .manifest import RunManifest

    params = SynthGenParams(
        num_nodes=args.nodes, num_classes=args.classes,
        d_text=args.d_text, d_image=args.d_image,
        intra_class_edge_prob=args.p_in, inter_class_edge_prob=args.p_out,
        conflict_rate=args.conflict, feature_noise_std=args.noise,
        seed=args.seed)
    params.validate()
    out = Path(args.out)
    _prepare_out(out, args.force)
    manifest = RunManifest("gen-synth", asdict(params), args.seed)
    manifest.write(out)
    graph = generate_synthetic(params)
    save_dataset(graph, out)
    manifest.extra["planted_conflict_fraction"] = float(graph.conflict_flags.mean())
    manifest.extra["num_edges"] = int(graph.adjacency.nnz // 2)
    manifest.finalize(out)
    return EXIT_OK


def _cmd_condense(args) -> int:
    from .condense import CondenseConfig, condense, save_condensed
    from .data import load_dataset
    from .errors import DivergenceError
    from .manifest import RunManifest

    cfg = CondenseConfig(
        lam=args.lam, ratio=args.ratio, lr_feat=args.lr_feat,
        lr_phi=args.lr_phi, lr_theta=args.lr_theta, outer=args.outer,
        inner=args.inner, mode=args.mode, seed=args.seed,
        threshold=args.threshold, hidden=args.hidden,
        phi_hidden=args.phi_hidden)
    cfg.validate()
    out = Path(args.out)
    _prepare_out(out, args.force)
    graph = load_dataset(args.data)
    manifest = RunManifest("condense", asdict(cfg), args.seed)
    manifest.fingerprint_inputs({"data": args.data})
    manifest.write(out)
    metrics_path = out / "metrics.jsonl"
    try:
        synth, log = condense(graph, cfg)
    except DivergenceError as err:
        last_good = getattr(err, "log", None)
        if last_good is not None:
            metrics_path.write_text(last_good.to_jsonl(_include_wall()))
        manifest.extra["aborted"] = str(err)
        manifest.finalize(out)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    save_condensed(synth, out / "condensed")
    metrics_path.write_text(log.to_jsonl(_include_wall()))
    manifest.extra["synthetic_nodes"] = int(synth.num_nodes)
    manifest.finalize(out)
    return EXIT_OK


def _resolve_condensed_dir(path: Path) -> Path:
    if (path / "meta.json").is_file():
        return path
    if (path / "condensed" / "meta.json").is_file():
        return path / "condensed"
    raise FileNotFoundError(f"no condensed graph found under {path}")


def _cmd_eval(args) -> int:
    from .condense import load_condensed
    from .data import load_dataset
    from .evaluate import EvalConfig, run_protocol
    from .manifest import RunManifest

    cfg = EvalConfig(arch=args.model, epochs=args.epochs, lr=args.lr,
                     weight_decay=args.weight_decay, runs=args.runs,
                     seed_base=args.seed, inductive=args.inductive,
                     hidden=args.hidden)
    cfg.validate()
    out = Path(args.out)
    _prepare_out(out, args.force)
    condensed_dir = _resolve_condensed_dir(Path(args.condensed))
    condensed = load_condensed(condensed_dir)
    graph = load_dataset(args.data)
    manifest = RunManifest("eval", asdict(cfg), args.seed)
    manifest.fingerprint_inputs({"condensed": condensed_dir, "data": args.data})
    manifest.write(out)
    report = run_protocol(condensed, graph, cfg)
    payload = {
        "arch": report.arch,
        "per_run": report.per_run,
        "mean": report.mean,
        "std": report.std,
        "condensed_fingerprint": report.condensed_fingerprint,
        "config": asdict(cfg),
    }
    with open(out / "eval_report.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    manifest.finalize(out)
    return EXIT_OK


def _cmd_baseline_random(args) -> int:
    from .condense import save_condensed
    from .data import load_dataset
    from .evaluate import random_coreset
    from .manifest import RunManifest

    out = Path(args.out)
    _prepare_out(out, args.force)
    graph = load_dataset(args.data)
    manifest = RunManifest("baseline-random",
                           {"ratio": args.ratio, "seed": args.seed}, args.seed)
    manifest.fingerprint_inputs({"data": args.data})
    manifest.write(out)
    coreset = random_coreset(graph, args.ratio, args.seed)
    save_condensed(coreset, out)
    manifest.extra["coreset_nodes"] = int(coreset.num_nodes)
    manifest.finalize(out)
    return EXIT_OK


_HANDLERS = {
    "gen-synth": _cmd_gen_synth,
    "condense": _cmd_condense,
    "eval": _cmd_eval,
    "baseline-random": _cmd_baseline_random,
}


def main(argv=None) -> int:
    _cap_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)
    from .errors import (
        ContractViolation,
        DatasetFormatError,
        IncompatibleShapesError,
        InvalidConfigError,
    )

    try:
        return _HANDLERS[args.command](args)
    except IncompatibleShapesError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (InvalidConfigError, DatasetFormatError, ContractViolation,
            FileExistsError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
