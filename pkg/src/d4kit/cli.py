"""Command-line pipeline: synth, dedup, embed, cluster, select, diagnose.

Every subcommand writes its outputs plus a resolved ``config.json`` into
``--out`` so any run can be reproduced from its output directory alone.
All randomness fans out from the single ``--seed`` by stable hashing of
(seed, stage name), and outputs are byte-identical across runs and thread
counts.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or file-format
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

from . import cluster as cluster_mod
from . import corpus as corpus_mod
from . import diagnostics as diag_mod
from . import embed as embed_mod
from . import minhash as minhash_mod
from . import schedule_cost as sched_mod
from . import select as select_mod
from .errors import FormatError, ParseError, ValidationError


def stage_seed(seed: int, stage: str) -> int:
    """Derive a per-stage seed so stages never share randomness."""
    digest = hashlib.blake2b(
        f"{seed}:{stage}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; this toolkit reserves 2 for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _prepare_out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in resolved.items():
        if isinstance(v, Path):
            resolved[k] = str(v)
    _write_json(out / "config.json", resolved)
    return out


def _selection_summary(result: select_mod.SelectionResult) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "method": result.method,
        "R_target": result.r_target,
        "R_achieved": result.r_achieved,
        "n_source": result.n_source,
        "n_kept": result.n_kept,
        "fingerprint": result.fingerprint,
    }
    if result.epsilon_used is not None:
        summary["epsilon_used"] = result.epsilon_used
    if result.warnings:
        summary["warnings"] = list(result.warnings)
    return summary


def _write_selection(out: Path, result: select_mod.SelectionResult) -> None:
    with (out / "selection.jsonl").open("w", encoding="utf-8") as fh:
        for doc_id, score in zip(result.kept_ids, result.scores):
            fh.write(json.dumps({"id": doc_id, "score": score, "kept": True}) + "\n")
    if result.stages:
        stage_names = ("semdedup", "prototypes")
        with (out / "stages.jsonl").open("w", encoding="utf-8") as fh:
            for name, stage in zip(stage_names, result.stages):
                rec = _selection_summary(stage)
                rec["stage"] = name
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_json(out / "summary.json", _selection_summary(result))


def _load_scores(path: str) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if "id" not in rec or "score" not in rec:
                raise ParseError("score record needs 'id' and 'score'", lineno)
            scores[rec["id"]] = float(rec["score"])
    return scores


# ----------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    spec = corpus_mod.SynthSpec(
        n_topics=args.n_topics,
        docs_per_topic=args.docs_per_topic,
        n_template_groups=args.template_groups,
        dupes_per_group=args.dupes_per_group,
        template_mutation_rate=args.mutation_rate,
        vocab_size=args.vocab_size,
        doc_length_range=(args.min_len, args.max_len),
        seed=stage_seed(args.seed, "synth"),
    )
    docs = corpus_mod.synthesize_corpus(spec)
    corpus_mod.write_corpus(docs, str(out / "corpus.jsonl"))
    _write_json(
        out / "summary.json",
        {"n_docs": len(docs), "total_tokens": docs.total_tokens},
    )
    print(f"synth: wrote {len(docs)} docs, {docs.total_tokens} tokens")


def cmd_minhash(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    docs = corpus_mod.load_corpus(args.corpus)
    cfg = minhash_mod.LshConfig(
        num_hashes=args.num_hashes,
        bands=args.bands,
        rows_per_band=args.rows_per_band,
        shingle_width=args.shingle_width,
        seed=stage_seed(args.seed, "minhash"),
    )
    result = minhash_mod.lsh_dedup(docs, cfg)
    (out / "kept_ids.txt").write_text(
        "".join(i + "\n" for i in result.kept_ids), encoding="utf-8"
    )
    with (out / "groups.jsonl").open("w", encoding="utf-8") as fh:
        for g in result.groups:
            fh.write(
                json.dumps({"group_id": g.group_id, "member_ids": list(g.member_ids)})
                + "\n"
            )
    _write_json(
        out / "summary.json",
        {
            "n_source": len(docs),
            "n_kept": len(result.kept_ids),
            "n_groups": len(result.groups),
        },
    )
    print(f"minhash: kept {len(result.kept_ids)}/{len(docs)}, {len(result.groups)} duplicate groups")


def cmd_embed(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    docs = corpus_mod.load_corpus(args.corpus)
    spec = embed_mod.EmbedderSpec(
        kind=args.embedder,
        dim=args.dim,
        seed=stage_seed(args.seed, "embed"),
        chunk_size=args.chunk_size,
        path=args.embeddings,
    )
    m = embed_mod.embed_corpus(docs, spec, threads=args.threads)
    embed_mod.write_embeddings(m, str(out / "embeddings.d4em"))
    _write_json(out / "summary.json", {"n": m.n, "dim": m.d})
    print(f"embed: {m.n} rows, dim {m.d}")


def cmd_cluster(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    emb = embed_mod.read_embeddings(args.embeddings)
    cfg = cluster_mod.KmeansConfig(
        k=args.k, iters=args.iters, seed=stage_seed(args.seed, "cluster")
    )
    clustering = cluster_mod.kmeans_spherical(emb, cfg)
    cluster_mod.write_clustering(clustering, str(out / "clustering.d4km"))
    _write_json(
        out / "summary.json",
        {
            "k": clustering.k,
            "n": clustering.n,
            "iters_run": clustering.iters_run,
            "objective": cluster_mod.objective(emb, clustering),
        },
    )
    print(f"cluster: k={clustering.k}, {clustering.iters_run} iterations")


def _clustering_for(args: argparse.Namespace, emb: embed_mod.EmbeddingMatrix, stage: str):
    if args.clustering:
        clustering = cluster_mod.read_clustering(args.clustering)
        clustering.validate_for(emb)
        return clustering
    cfg = cluster_mod.KmeansConfig(
        k=args.k, iters=args.iters, seed=stage_seed(args.seed, stage)
    )
    return cluster_mod.kmeans_spherical(emb, cfg)


def cmd_select(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    emb = embed_mod.read_embeddings(args.embeddings)
    method = args.method
    if method == "random":
        if args.r is None:
            raise ValidationError("--r is required for random selection")
        result = select_mod.select_random(
            emb.ids, args.r, seed=stage_seed(args.seed, "select.random")
        )
    elif method in ("semdedup", "prototypes"):
        if args.r is None:
            raise ValidationError(f"--r is required for {method}")
        clustering = _clustering_for(args, emb, "select.kmeans")
        if method == "semdedup":
            result = select_mod.semdedup(emb, clustering, args.r)
        else:
            result = select_mod.ssl_prototypes(emb, clustering, args.r)
    else:  # d4
        if args.r_dedup is None or args.r_proto is None:
            raise ValidationError("--r-dedup and --r-proto are required for d4")
        kcfg = cluster_mod.KmeansConfig(
            k=args.k, iters=args.iters, seed=stage_seed(args.seed, "select.kmeans")
        )
        cfg = select_mod.D4Config(
            r_dedup=args.r_dedup,
            r_proto=args.r_proto,
            recluster=not args.no_recluster,
            kmeans=kcfg,
        )
        clustering = (
            cluster_mod.read_clustering(args.clustering) if args.clustering else None
        )
        artifacts: dict = {}
        result = select_mod.d4(emb, cfg, clustering=clustering, artifacts=artifacts)
        embed_mod.write_embeddings(
            artifacts["stage2_embeddings"], str(out / "stage2_embeddings.d4em")
        )
        cluster_mod.write_clustering(
            artifacts["stage2_clustering"], str(out / "stage2_clustering.d4km")
        )
    _write_selection(out, result)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(
        f"select: {result.method} kept {result.n_kept}/{result.n_source} "
        f"(R_achieved={result.r_achieved:.4f})"
    )


def cmd_diagnose(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    emb = embed_mod.read_embeddings(args.embeddings)
    clustering = cluster_mod.read_clustering(args.clustering)
    report = diag_mod.analyze_clustering(emb, clustering, args.std_threshold)
    _write_json(
        out / "report.json",
        {
            "cluster_balance": report.cluster_balance,
            "n_duplicate_driven": len(report.duplicate_driven),
            "notes": list(report.notes),
        },
    )
    with (out / "duplicate_driven.jsonl").open("w", encoding="utf-8") as fh:
        for f in report.duplicate_driven:
            fh.write(
                json.dumps(
                    {
                        "cluster_index": f.cluster_index,
                        "std": f.std,
                        "mean_distance": f.mean_distance,
                        "size": f.size,
                    }
                )
                + "\n"
            )
    with (out / "ecdf.tsv").open("w", encoding="utf-8") as fh:
        fh.write("mean_distance\tcumulative_fraction\n")
        for x, y in report.ecdf:
            fh.write(f"{x!r}\t{y!r}\n")
    balance = "n/a" if report.cluster_balance is None else f"{report.cluster_balance:.4f}"
    print(f"cluster balance: {balance}")
    print(f"duplicate-driven clusters (std < {args.std_threshold:g}): {len(report.duplicate_driven)}")
    print(f"{'cluster':>8} {'std':>10} {'mean_dist':>10} {'size':>6}")
    for f in report.duplicate_driven:
        print(f"{f.cluster_index:>8} {f.std:>10.5f} {f.mean_distance:>10.5f} {f.size:>6}")


def _read_selection_dir(path: str) -> select_mod.SelectionResult:
    base = Path(path)
    summary = json.loads((base / "summary.json").read_text(encoding="utf-8"))
    kept: list[str] = []
    scores: list[float] = []
    with (base / "selection.jsonl").open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kept.append(rec["id"])
            scores.append(float(rec["score"]))
    return select_mod.SelectionResult(
        method=summary["method"],
        r_target=summary["R_target"],
        kept_ids=tuple(kept),
        scores=tuple(scores),
        n_source=summary["n_source"],
        fingerprint=summary["fingerprint"],
        epsilon_used=summary.get("epsilon_used"),
    )


def cmd_overlap(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    results = [_read_selection_dir(p) for p in args.selections]
    matrix = diag_mod.selection_overlap(results)
    _write_json(
        out / "overlap.json",
        {"labels": list(matrix.labels), "cells": matrix.cells.tolist()},
    )
    with (out / "overlap.tsv").open("w", encoding="utf-8") as fh:
        fh.write("\t" + "\t".join(matrix.labels) + "\n")
        for label, row in zip(matrix.labels, matrix.cells):
            fh.write(label + "\t" + "\t".join(f"{v!r}" for v in row) + "\n")
    print("overlap (% of smaller set):")
    for label, row in zip(matrix.labels, matrix.cells):
        print(f"  {label}: " + " ".join(f"{v:6.2f}" for v in row))


def cmd_nn(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    valid = embed_mod.read_embeddings(args.valid_embeddings)
    train = embed_mod.read_embeddings(args.embeddings)
    report = diag_mod.nn_to_train(valid, train)
    with (out / "nn.jsonl").open("w", encoding="utf-8") as fh:
        for e in report.entries:
            fh.write(
                json.dumps(
                    {"valid_id": e.valid_id, "train_id": e.train_id, "distance": e.distance}
                )
                + "\n"
            )
    _write_json(
        out / "summary.json",
        {"n": len(report.entries), "mean": report.mean, "median": report.median},
    )
    print(f"nn: {len(report.entries)} validation points, mean distance {report.mean:.4f}")
    if args.scores_before or args.scores_after:
        if not (args.scores_before and args.scores_after):
            raise ValidationError("--scores-before and --scores-after go together")
        binned = diag_mod.binned_score_analysis(
            report,
            _load_scores(args.scores_before),
            _load_scores(args.scores_after),
            n_bins=args.bins,
        )
        with (out / "binned.jsonl").open("w", encoding="utf-8") as fh:
            for i, b in enumerate(binned.bins):
                fh.write(
                    json.dumps(
                        {
                            "bin": i,
                            "lo": binned.edges[i],
                            "hi": binned.edges[i + 1],
                            "count": b.count,
                            "mean_distance": b.mean_distance,
                            "mean_before": b.mean_before,
                            "mean_delta": b.mean_delta,
                        }
                    )
                    + "\n"
                )
        with (out / "binned.tsv").open("w", encoding="utf-8") as fh:
            fh.write("bin_center\tmean_delta\n")
            for i, b in enumerate(binned.bins):
                if b.count:
                    center = 0.5 * (binned.edges[i] + binned.edges[i + 1])
                    fh.write(f"{center!r}\t{b.mean_delta!r}\n")


def cmd_schedule(args: argparse.Namespace) -> None:
    out = _prepare_out(args)
    docs = corpus_mod.load_corpus(args.corpus)
    plan = sched_mod.plan_epochs(
        docs,
        args.budget_tokens,
        seed=stage_seed(args.seed, "schedule"),
        reshuffle_each_epoch=args.reshuffle,
    )
    (out / "order.txt").write_text(
        "".join(i + "\n" for i in plan.order), encoding="utf-8"
    )
    _write_json(
        out / "summary.json",
        {
            "T_total": plan.t_total,
            "T_selected": plan.t_selected,
            "epochs": plan.epochs,
            "n_docs": len(docs),
            "n_scheduled": len(plan.order),
        },
    )
    print(f"schedule: epochs={plan.epochs:g}, {len(plan.order)} scheduled documents")


def cmd_cost(args: argparse.Namespace) -> None:
    model = sched_mod.CostModel(
        baseline_train_gpu_hours=args.baseline_gpu_hours,
        fraction_updates_saved=args.fraction_saved,
        embed_gpu_hours=args.embed_gpu_hours,
        cpu_stage_gpu_hour_equivalent=args.cpu_gpu_hours,
    )
    naive = sched_mod.naive_gain(model)
    overall = sched_mod.overall_gain(model)
    print(f"naive_gain_gpu_hours={naive:g}")
    print(f"overall_gain_gpu_hours={overall:g}")
    if args.out:
        out = _prepare_out(args)
        _write_json(
            out / "summary.json",
            {"naive_gain_gpu_hours": naive, "overall_gain_gpu_hours": overall},
        )


# ----------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="d4kit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n-topics", type=int, default=10)
    p.add_argument("--docs-per-topic", type=int, default=100)
    p.add_argument("--template-groups", type=int, default=0)
    p.add_argument("--dupes-per-group", type=int, default=2)
    p.add_argument("--mutation-rate", type=float, default=0.0)
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--min-len", type=int, default=40)
    p.add_argument("--max-len", type=int, default=120)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("minhash", help="MinHash LSH near-duplicate removal")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--num-hashes", type=int, default=20)
    p.add_argument("--bands", type=int, default=20)
    p.add_argument("--rows-per-band", type=int, default=1)
    p.add_argument("--shingle-width", type=int, default=5)
    p.set_defaults(func=cmd_minhash)

    p = sub.add_parser("embed", help="embed a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embedder", choices=("hash", "external"), default="hash")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--chunk-size", type=int, default=None)
    p.add_argument("--embeddings", default=None, help="precomputed file for --embedder external")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="fit spherical k-means")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--iters", type=int, default=20)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select", help="run a data-selection method")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--clustering", default=None)
    p.add_argument("--method", choices=("random", "semdedup", "prototypes", "d4"), required=True)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--r-dedup", type=float, default=None)
    p.add_argument("--r-proto", type=float, default=None)
    p.add_argument("--no-recluster", action="store_true")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--iters", type=int, default=20)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("diagnose", help="clustering diagnostics")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--clustering", required=True)
    p.add_argument("--std-threshold", type=float, default=diag_mod.STD_THRESHOLD)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("overlap", help="selection overlap matrix")
    common(p)
    p.add_argument("selections", nargs="+", help="selection output directories")
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("nn", help="nearest neighbors of validation points in train")
    common(p)
    p.add_argument("valid_embeddings", help="validation embedding file")
    p.add_argument("--embeddings", required=True, help="train embedding file")
    p.add_argument("--scores-before", default=None)
    p.add_argument("--scores-after", default=None)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_nn)

    p = sub.add_parser("schedule", help="epoch plan for a token budget")
    common(p)
    p.add_argument("--corpus", required=True, help="selected corpus file")
    p.add_argument("--budget-tokens", type=int, required=True)
    p.add_argument("--reshuffle", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("cost", help="selection efficiency-gain accounting")
    common(p, out_required=False)
    p.add_argument("--baseline-gpu-hours", type=float, required=True)
    p.add_argument("--fraction-saved", type=float, required=True)
    p.add_argument("--embed-gpu-hours", type=float, default=0.0)
    p.add_argument("--cpu-gpu-hours", type=float, default=0.0)
    p.set_defaults(func=cmd_cost)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    except (ParseError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
