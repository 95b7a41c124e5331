"""Command-line interface for the full retrieval pipeline.

Subcommands cover the pipeline stages: index, cluster, select, expand,
search, train, rerank, evaluate, dump-density, and synth. All randomness
derives from one root seed; output files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import feedback as fb
from . import ltr as ltr_mod
from . import pipeline
from . import synthbench
from . import verticals as vert
from .corpus import (
    Corpus,
    load_corpus,
    read_account_stats,
    document_record,
    tokenize,
)
from .errors import TemporafedError
from .evaluation import (
    Qrels,
    aggregate_row,
    evaluate_run,
    read_qrels,
    read_run,
    read_topics,
    write_metrics_report,
)
from .retrieval import Index, build_index
from .temporal import DENSITY_FLOOR

logger = logging.getLogger(__name__)


def _config_from_args(args) -> pipeline.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = pipeline.parse_config_file(args.config)
    else:
        cfg = pipeline.ExperimentConfig()
    for flag, attr in (
        ("method", "method"),
        ("seed", "seed"),
        ("k", "k"),
        ("depth", "depth"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


def _load_main(args) -> tuple[Corpus, Index]:
    corpus = load_corpus(args.corpus)
    return corpus, build_index(corpus)


def _load_external_corpus(path: str, accounts_path: str | None) -> Corpus:
    stats = read_account_stats(accounts_path) if accounts_path else None
    return load_corpus(path, account_stats=stats)


def _verticals_from_args(args, cfg) -> list[vert.Vertical]:
    external_dir = Path(args.external)
    if external_dir.is_dir():
        return load_verticals(external_dir)
    corpus = _load_external_corpus(args.external, getattr(args, "accounts", None))
    return vert.build_verticals(corpus, cfg.k, cfg.seed)


def save_verticals(outdir: Path, corpus: Corpus, labels) -> None:
    """Persist the assignment CSV and per-vertical document shards."""
    outdir.mkdir(parents=True, exist_ok=True)
    rows = ["doc_id,vertical_id"]
    for doc, label in zip(corpus.documents, labels):
        rows.append(f"{doc.doc_id},{int(label)}")
    pipeline.atomic_write_text(outdir / "assignment.csv", "\n".join(rows) + "\n")
    k = int(max(labels)) + 1
    for vertical_id in range(k):
        shard_dir = outdir / "verticals" / str(vertical_id)
        shard_dir.mkdir(parents=True, exist_ok=True)
        members = [
            document_record(doc)
            for doc, label in zip(corpus.documents, labels)
            if int(label) == vertical_id
        ]
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in members)
        pipeline.atomic_write_text(shard_dir / "docs.jsonl", text)


def load_verticals(outdir: Path) -> list[vert.Vertical]:
    """Rebuild Vertical indexes from a persisted shard layout."""
    shards_root = outdir / "verticals"
    if not shards_root.is_dir():
        raise TemporafedError(f"{shards_root} is not a verticals directory")
    verticals = []
    for shard_dir in sorted(shards_root.iterdir(), key=lambda p: int(p.name)):
        shard = load_corpus(shard_dir / "docs.jsonl")
        verticals.append(
            vert.Vertical(
                vertical_id=int(shard_dir.name),
                index=build_index(shard),
                label_term="",
            )
        )
    return verticals


def cmd_index(args) -> int:
    corpus, index = _load_main(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    text = "".join(
        json.dumps(document_record(d), sort_keys=True) + "\n"
        for d in corpus.documents
    )
    pipeline.atomic_write_text(outdir / "corpus.jsonl", text)
    lo, hi = corpus.time_span()
    stats = {
        "documents": index.n_docs,
        "vocabulary": len(index.cf),
        "total_terms": index.total_terms,
        "avg_doc_length": round(index.avgdl, 3),
        "time_span": [int(lo), int(hi)],
        "dropped_malformed": corpus.stats.malformed,
        "dropped_retweets": corpus.stats.filtered_retweet,
        "dropped_language": corpus.stats.filtered_language,
        "dropped_account": corpus.stats.filtered_account,
        "duplicate_ids": corpus.stats.duplicates,
    }
    pipeline.atomic_write_text(
        outdir / "index_stats.json", json.dumps(stats, indent=2) + "\n"
    )
    print(f"indexed {index.n_docs} documents into {outdir}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_external_corpus(args.external, args.accounts)
    labels = vert.cluster_verticals(
        [d.tokens for d in corpus.documents], cfg.k, cfg.seed
    )
    save_verticals(Path(args.out), corpus, labels)
    print(f"clustered {corpus.n} documents into {cfg.k} verticals at {args.out}")
    return 0


def cmd_select(args) -> int:
    cfg = _config_from_args(args)
    verticals = _verticals_from_args(args, cfg)
    topics = read_topics(args.topics)
    lines = ["query_id,vertical_id,weight"]
    for topic in topics:
        selection = pipeline.build_selection(
            verticals, tokenize(topic.text), topic, cfg, with_densities=False
        )
        for sel in selection.selected:
            lines.append(f"{topic.query_id},{sel.vertical_id},{sel.weight:.6f}")
    pipeline.atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote selection for {len(topics)} queries to {args.out}")
    return 0


def cmd_expand(args) -> int:
    cfg = _config_from_args(args)
    if cfg.method not in ("rm-e", "rmt-e"):
        cfg.method = "rmt-e" if args.method is None else cfg.method
    verticals = _verticals_from_args(args, cfg)
    by_id = {v.vertical_id: v for v in verticals}
    topics = read_topics(args.topics)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for topic in topics:
        query_terms = tokenize(topic.text)
        selection = pipeline.build_selection(
            verticals, query_terms, topic, cfg,
            with_densities=(cfg.method == "rmt-e"),
        )
        model = pipeline._expansion_model(
            cfg.method, selection, by_id, query_terms, topic, cfg
        )
        expanded = fb.interpolate_query(
            fb.query_language_model(query_terms), model, cfg.lam
        )
        ranked = sorted(expanded.final.items(), key=lambda kv: (-kv[1], kv[0]))
        text = "".join(f"{t}\t{w:.6f}\n" for t, w in ranked)
        pipeline.atomic_write_text(outdir / f"{topic.query_id}.tsv", text)
    print(f"wrote expanded queries for {len(topics)} topics to {outdir}")
    return 0


def _run_and_write(args, cfg, model=None, candidate_run=None) -> int:
    _, index = _load_main(args)
    verticals = None
    if cfg.method in ("kde-e", "rm-e", "rmt-e", "full"):
        if not args.external:
            raise TemporafedError(f"method {cfg.method} requires --external")
        verticals = _verticals_from_args(args, cfg)
    topics = read_topics(args.topics)
    prepared_map = None
    if candidate_run is not None:
        prepared_map = {}
        for topic in topics:
            entries = candidate_run.get(topic.query_id)
            if not entries:
                continue
            doc_ids = [e.doc_id for e in entries]
            internal = [index.internal(d) for d in doc_ids]
            query_terms = tokenize(topic.text)
            features = ltr_mod.feature_matrix(
                index, internal, query_terms,
                mu=cfg.mu, k1=cfg.bm25_k1, b=cfg.bm25_b,
            )
            prepared_map[topic.query_id] = pipeline.PreparedQuery(
                query_id=topic.query_id, doc_ids=doc_ids, features=features
            )
    run = pipeline.run_experiment(
        cfg.method, index, verticals, topics, cfg,
        model=model, prepared_map=prepared_map,
    )
    pipeline.atomic_write_text(args.out, pipeline.run_to_text(run, cfg.tag))
    print(f"wrote run for {len(run)} queries to {args.out}")
    return 0


def cmd_search(args) -> int:
    cfg = _config_from_args(args)
    model = None
    if cfg.method in ("ltr", "full"):
        if not args.model:
            raise TemporafedError(f"method {cfg.method} requires --model")
        model = ltr_mod.load_model(args.model)
    return _run_and_write(args, cfg, model=model)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if cfg.method not in ("ltr", "full"):
        raise TemporafedError("train supports methods ltr and full")
    _, index = _load_main(args)
    verticals = None
    if cfg.method == "full":
        if not args.external:
            raise TemporafedError("method full requires --external")
        verticals = _verticals_from_args(args, cfg)
    topics = read_topics(args.topics)
    qrels = read_qrels(args.qrels)
    model, _ = pipeline.train_for_method(
        cfg.method, index, verticals, topics, qrels, cfg
    )
    digest = ltr_mod.config_hash(
        {
            "method": cfg.method,
            "mu": cfg.mu,
            "n_fb": cfg.n_fb,
            "n_terms": cfg.n_terms,
            "lambda": cfg.lam,
            "kde.scheme": cfg.kde_scheme,
            "seed": cfg.seed,
            "restarts": cfg.ltr_restarts,
            "max_cycles": cfg.ltr_max_cycles,
        }
    )
    ltr_mod.save_model(args.out, model, digest)
    if args.log:
        log_buffer = io.StringIO()
        writer = csv.writer(log_buffer)
        writer.writerow(["iteration", "MAP"])
        for iteration, value in enumerate(model.map_trace):
            writer.writerow([iteration, f"{value:.6f}"])
        pipeline.atomic_write_text(args.log, log_buffer.getvalue())
    final = model.map_trace[-1] if model.map_trace else float("nan")
    print(f"trained {cfg.method} model (training MAP {final:.4f}) to {args.out}")
    return 0


def cmd_rerank(args) -> int:
    cfg = _config_from_args(args)
    if cfg.method not in ("ltr", "full"):
        raise TemporafedError("rerank supports methods ltr and full")
    model = ltr_mod.load_model(args.model)
    candidate_run, _ = read_run(args.run)
    return _run_and_write(args, cfg, model=model, candidate_run=candidate_run)


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    run, _ = read_run(args.run)
    qrels = read_qrels(args.qrels)
    timestamps = None
    if args.corpus:
        corpus = load_corpus(args.corpus)
        timestamps = {d.doc_id: d.timestamp for d in corpus.documents}
    rows = evaluate_run(run, qrels, timestamps, period=cfg.period)
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["query_id", "AP", "P30", "Rprec", "EMD"])
    for row in rows + [aggregate_row(rows)]:
        writer.writerow(
            [
                row.query_id,
                f"{row.ap:.6f}",
                f"{row.p30:.6f}",
                f"{row.r_prec:.6f}",
                "" if row.emd is None else f"{row.emd:.6f}",
            ]
        )
    pipeline.atomic_write_text(args.out, buffer.getvalue())
    if not args.no_figures:
        from . import plotting
        from .evaluation import temporal_r_precision_profile

        out_path = Path(args.out)
        figures_dir = out_path.parent / (out_path.stem + "_figures")
        figures_dir.mkdir(parents=True, exist_ok=True)
        plotting.save_metrics_plot(
            figures_dir / "ap_by_query.png",
            [r.query_id for r in rows],
            [r.ap for r in rows],
        )
        if timestamps is not None:
            for row in rows:
                profile = temporal_r_precision_profile(
                    run[row.query_id], qrels, row.query_id, timestamps,
                    period=cfg.period,
                )
                plotting.save_profile_plot(
                    figures_dir / f"profile_{row.query_id}.png",
                    profile.truth,
                    profile.retrieved,
                    profile.emd,
                    title=row.query_id,
                )
        print(f"wrote metrics to {args.out} and figures to {figures_dir}")
    else:
        print(f"wrote metrics to {args.out}")
    agg = aggregate_row(rows)
    print(
        f"MAP {agg.ap:.4f}  P30 {agg.p30:.4f}  Rprec {agg.r_prec:.4f}"
        + (f"  EMD {agg.emd:.4f}" if agg.emd is not None else "")
    )
    return 0


def cmd_dump_density(args) -> int:
    cfg = _config_from_args(args)
    _, index = _load_main(args)
    topics = read_topics(args.topics)
    matches = [t for t in topics if t.query_id == args.query_id]
    if not matches:
        raise TemporafedError(f"query_id {args.query_id!r} not in {args.topics}")
    topic = matches[0]
    query_terms = tokenize(topic.text)
    if args.source == "corpus":
        density = fb.corpus_temporal_feedback(
            index, query_terms,
            n_fb=cfg.n_fb, scheme=cfg.kde_scheme,
            query_time=topic.query_time, mu=cfg.mu,
        )
        evaluator = density.evaluate
        lo = float(density.timestamps.min()) - 3 * density.bandwidth
        hi = float(density.timestamps.max()) + 3 * density.bandwidth
    else:
        if not args.external:
            raise TemporafedError("--source external requires --external")
        verticals = _verticals_from_args(args, cfg)
        selection = pipeline.build_selection(verticals, query_terms, topic, cfg)
        evaluator = lambda t: vert.external_temporal_relevance(selection, t)
        times = np.concatenate(
            [s.density.timestamps for s in selection.selected]
        )
        width = max(s.density.bandwidth for s in selection.selected)
        lo = float(times.min()) - 3 * width
        hi = float(times.max()) + 3 * width
    grid = np.linspace(lo, hi, args.points)
    values = np.asarray(evaluator(grid))
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["t", "f"])
    for t, f_val in zip(grid, values):
        writer.writerow([f"{t:.3f}", f"{f_val:.12e}"])
    pipeline.atomic_write_text(args.out, buffer.getvalue())
    if not args.no_figures:
        from . import plotting

        figure_path = Path(args.out).with_suffix(".png")
        plotting.save_density_plot(
            figure_path, grid, values,
            title=f"{topic.query_id} {args.source} temporal density",
        )
        print(f"wrote density to {args.out} and figure to {figure_path}")
    else:
        print(f"wrote density to {args.out}")
    return 0


def cmd_synth(args) -> int:
    config = synthbench.SynthConfig(
        seed=args.seed if args.seed is not None else 42,
        n_queries=args.queries,
        corpus_size=args.corpus_size,
        external_size=args.external_size,
        burst_concentration=args.concentration,
    )
    data = synthbench.generate(config)
    paths = synthbench.write(data, args.out)
    print(
        f"wrote synthetic benchmark to {args.out} "
        f"({len(data.documents)} main, {len(data.external)} external, "
        f"{len(data.topics)} topics)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="temporafed",
        description="Time-aware federated retrieval over timestamped posts.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="root random seed")
        return p

    p = add("index", cmd_index, help="ingest and index a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = add("cluster", cmd_cluster, help="partition an external corpus into verticals")
    p.add_argument("--external", required=True)
    p.add_argument("--accounts", help="account stats CSV for filtering")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="number of verticals")

    p = add("select", cmd_select, help="two-stage vertical selection per query")
    p.add_argument("--external", required=True, help="external JSONL or cluster dir")
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)

    p = add("expand", cmd_expand, help="write expanded query models")
    p.add_argument("--external", required=True)
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["rm-e", "rmt-e"])
    p.add_argument("--k", type=int)

    p = add("search", cmd_search, help="run retrieval for a method")
    p.add_argument("--corpus", required=True)
    p.add_argument("--external", help="external JSONL or cluster dir")
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=list(pipeline.METHODS))
    p.add_argument("--model", help="trained model file for ltr/full")
    p.add_argument("--k", type=int)
    p.add_argument("--depth", type=int)

    p = add("train", cmd_train, help="train the log-linear model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--external")
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--method", choices=["ltr", "full"])
    p.add_argument("--k", type=int)
    p.add_argument("--depth", type=int)

    p = add("rerank", cmd_rerank, help="rerank an existing run with a model")
    p.add_argument("--run", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--external")
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["ltr", "full"])
    p.add_argument("--depth", type=int)

    p = add("evaluate", cmd_evaluate, help="score a run against judgments")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", help="corpus JSONL for temporal profiles")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = add("dump-density", cmd_dump_density, help="emit a density curve as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--external")
    p.add_argument("--accounts")
    p.add_argument("--topics", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--source", choices=["corpus", "external"], default="corpus")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--k", type=int)

    p = add("synth", cmd_synth, help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--corpus-size", type=int, default=20000)
    p.add_argument("--external-size", type=int, default=5000)
    p.add_argument("--concentration", type=float, default=0.8)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TemporafedError as exc:
        print(f"temporafed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"temporafed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
