"""Command-line surface: ingest, split, build, classify, eval, project.

One JSON config file can drive the whole evaluation pipeline; flags override
file values, and every resolved value (defaults included) feeds the config
digest embedded in each artifact. Artifacts carry no timestamps, so rerunning
a command with identical inputs, seeds, and flags reproduces them byte for
byte.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import evaluation, ingest, ragqa, refset
from .embed import Embedder, HashingEmbedder, RemoteEmbedder
from .store import VectorStore

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "datasets": [],
    "test_fraction": 0.2,
    "seed": 0,
    "sample": None,
    "embedder": {"kind": "hashing", "dim": 256},
    "strategies": {
        "clustered": {"k": "auto", "k_min": 2, "k_max": 10, "per_cluster": 10000},
        "random": {"n": 50000},
    },
    "template_path": None,
    "backend": {"kind": "mock", "threshold": ragqa.DEFAULT_MOCK_THRESHOLD},
    "top_k": ragqa.DEFAULT_TOP_K,
    "in_flight": 1,
    "out_dir": "raglog-out",
}

STRATEGY_DEFAULTS = {
    "clustered": {"k": "auto", "k_min": 2, "k_max": 10, "per_cluster": 10000},
    "random": {"n": 50000},
}

BACKEND_DEFAULTS = {
    "mock": {"threshold": ragqa.DEFAULT_MOCK_THRESHOLD},
    "remote": {"model": "", "temperature": ragqa.DEFAULT_TEMPERATURE, "max_attempts": 5},
}


# Output location does not change results, so it stays out of the digest.
_DIGEST_EXCLUDED = ("out_dir",)


def config_digest(resolved: dict) -> str:
    significant = {k: v for k, v in resolved.items() if k not in _DIGEST_EXCLUDED}
    canonical = json.dumps(significant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _resolve_section(kind_key: str, defaults_by_kind: dict, section: dict) -> dict:
    kind = section.get(kind_key, next(iter(defaults_by_kind)))
    if kind not in defaults_by_kind:
        raise ValueError(f"unknown {kind_key} {kind!r}; expected one of {sorted(defaults_by_kind)}")
    resolved = {kind_key: kind}
    resolved.update(defaults_by_kind[kind])
    resolved.update({k: v for k, v in section.items() if k != kind_key})
    return resolved


def resolve_config(file_config: dict | None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- flag overrides, with every default made explicit."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    for source in (file_config or {}, overrides or {}):
        for key, value in source.items():
            if value is None and key not in ("sample", "template_path"):
                continue
            if key not in DEFAULT_CONFIG:
                raise ValueError(f"unknown config key {key!r}")
            cfg[key] = value
    cfg["embedder"] = _resolve_section("kind", {"hashing": {"dim": 256}, "remote": {"model": "", "dim": 0}}, cfg["embedder"])
    cfg["backend"] = _resolve_section("kind", BACKEND_DEFAULTS, cfg["backend"])
    strategies = {}
    for name, params in cfg["strategies"].items():
        if name not in STRATEGY_DEFAULTS:
            raise ValueError(f"unknown strategy {name!r}; expected one of {sorted(STRATEGY_DEFAULTS)}")
        merged = dict(STRATEGY_DEFAULTS[name])
        merged.update(params or {})
        strategies[name] = merged
    cfg["strategies"] = strategies
    return cfg


def build_embedder(section: dict) -> Embedder:
    if section["kind"] == "hashing":
        return HashingEmbedder(dim=int(section["dim"]))
    if section["kind"] == "remote":
        if not section.get("model"):
            raise ValueError("remote embedder needs a model name")
        return RemoteEmbedder(model=section["model"], dim=int(section["dim"]))
    raise ValueError(f"unknown embedder kind {section['kind']!r}")


def build_backend(section: dict) -> ragqa.CompletionBackend:
    if section["kind"] == "mock":
        return ragqa.MockBackend(threshold=float(section["threshold"]))
    if section["kind"] == "remote":
        if not section.get("model"):
            raise ValueError("remote backend needs a model name")
        return ragqa.RemoteBackend(
            model=section["model"],
            temperature=float(section["temperature"]),
            max_attempts=int(section["max_attempts"]),
        )
    raise ValueError(f"unknown backend kind {section['kind']!r}")


def build_plan(name: str, params: dict, seed: int) -> refset.ReferencePlan:
    if name == "random":
        return refset.RandomPlan(n=int(params["n"]), seed=seed)
    k = params.get("k", "auto")
    fixed_k = None if k in (None, "auto") else int(k)
    return refset.ClusteredPlan(
        per_cluster=int(params["per_cluster"]),
        k=fixed_k,
        k_min=int(params.get("k_min", 2)),
        k_max=int(params.get("k_max", 10)),
        seed=seed,
    )


def load_template(path: str | None) -> ragqa.PromptTemplate:
    return ragqa.PromptTemplate.from_file(path) if path else ragqa.PromptTemplate.default()


# BGL and Thunderbird share the same alert-tag labeling convention.
_FORMAT_ALIASES = {"bgl": "bgl_like", "thunderbird": "bgl_like", "bgl_like": "bgl_like"}


def _canonical_format(fmt: str) -> str:
    try:
        return _FORMAT_ALIASES[fmt]
    except KeyError:
        raise ValueError(f"unknown log format: {fmt!r}") from None


def load_entries(path: str | Path, fmt: str = "bgl_like") -> list[ingest.LogEntry]:
    """Accept either an ingested JSONL dataset or a raw log file."""
    if ingest.is_dataset_file(path):
        entries, _ = ingest.read_dataset(path)
        return entries
    return ingest.load_dataset(path, fmt, lenient=True).entries


def classify_batch(
    store: VectorStore,
    embedder: Embedder,
    backend: ragqa.CompletionBackend,
    template: ragqa.PromptTemplate,
    entries: list[ingest.LogEntry],
    top_k: int,
    in_flight: int = 1,
) -> list[tuple[ragqa.Verdict | ragqa.ClassificationError, ragqa.Trace]]:
    """Classify entries one at a time; results are keyed by input index.

    Concurrency is an execution detail for slow remote backends; per-entry
    semantics are identical to the sequential path.
    """

    def one(entry: ingest.LogEntry):
        try:
            verdict, trace = ragqa.classify_entry(store, embedder, backend, template, entry.message, top_k)
            return verdict, trace
        except ragqa.ClassificationError as exc:
            return exc, exc.trace

    if in_flight <= 1:
        return [one(e) for e in entries]
    with ThreadPoolExecutor(max_workers=in_flight) as pool:
        return list(pool.map(one, entries))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace) -> int:
    fmt = _canonical_format(args.format)
    result = ingest.load_dataset(args.input, fmt, limit=args.limit, lenient=args.lenient)
    entries = result.entries
    if args.dedup:
        seen: set[str] = set()
        unique = []
        for e in entries:
            if e.message not in seen:
                seen.add(e.message)
                unique.append(e)
        entries = unique
    digest = config_digest(
        {
            "command": "ingest",
            "format": fmt,
            "limit": args.limit,
            "lenient": args.lenient,
            "dedup": args.dedup,
        }
    )
    ingest.write_dataset(
        args.out,
        entries,
        source=Path(args.input).name,
        extra_header={
            "config_digest": digest,
            "blank_lines": result.blank_lines,
            "skipped_lines": result.skipped_lines,
        },
    )
    anomalous = sum(1 for e in entries if e.label is ingest.GroundTruth.ANOMALOUS)
    print(f"entries={len(entries)} anomalous={anomalous}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    entries, header = ingest.read_dataset(args.dataset)
    split = ingest.split_dataset(entries, args.test_fraction, args.seed)
    digest = config_digest(
        {"command": "split", "test_fraction": args.test_fraction, "seed": args.seed}
    )
    meta = {
        "config_digest": digest,
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "discarded_train_anomalous": split.discarded_train_anomalous,
    }
    source = header.get("source", "")
    ingest.write_dataset(args.out_train, split.train_normals, source, extra_header=dict(meta, side="train"))
    ingest.write_dataset(args.out_test, split.test, source, extra_header=dict(meta, side="test"))
    print(
        f"train_normals={len(split.train_normals)} test={len(split.test)} "
        f"discarded_train_anomalous={split.discarded_train_anomalous}"
    )
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    entries = load_entries(args.dataset, _canonical_format(args.format))
    normals = [e for e in entries if e.label is ingest.GroundTruth.NORMAL]
    dropped = len(entries) - len(normals)
    if dropped:
        log.warning("ignoring %d anomalous entries; the reference store holds normals only", dropped)
    embedder_cfg = {"kind": args.embedder, "dim": args.dim, "model": args.model}
    digest = config_digest(
        {
            "command": "build",
            "strategy": args.strategy,
            "k": args.k,
            "k_min": args.k_min,
            "k_max": args.k_max,
            "per_cluster": args.per_cluster,
            "n": args.n,
            "seed": args.seed,
            "embedder": embedder_cfg,
        }
    )
    embedder = build_embedder({"kind": args.embedder, "dim": args.dim, "model": args.model})
    if args.strategy == "random":
        if args.n is None:
            raise ValueError("--strategy random requires --n")
        plan: refset.ReferencePlan = refset.RandomPlan(n=args.n, seed=args.seed)
    else:
        if args.per_cluster is None:
            raise ValueError("--strategy clustered requires --per-cluster")
        fixed_k = None if args.k == "auto" else int(args.k)
        plan = refset.ClusteredPlan(
            per_cluster=args.per_cluster, k=fixed_k, k_min=args.k_min, k_max=args.k_max, seed=args.seed
        )
    store, report = refset.build_reference_store(
        normals, plan, embedder, store_path=args.out, config_digest=digest
    )
    report_path = args.report or str(Path(args.out).with_suffix(".report.json"))
    report.save(report_path)
    k_part = f" k={report.k}" if report.k is not None else ""
    print(f"built={store.count} strategy={report.strategy}{k_part} shortfall={report.shortfall}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    store = VectorStore.load(args.store)
    embedder = build_embedder({"kind": args.embedder, "dim": store.dim, "model": args.model})
    backend = build_backend(
        {
            "kind": args.backend,
            "threshold": args.threshold,
            "model": args.model,
            "temperature": args.temperature,
            "max_attempts": 5,
        }
    )
    template = load_template(args.template)
    try:
        verdict, trace = ragqa.classify_entry(store, embedder, backend, template, args.line, args.top_k)
        outcome = verdict.value.value
    except ragqa.ClassificationError as exc:
        if args.trace:
            Path(args.trace).write_text(exc.trace.to_json() + "\n", encoding="utf-8")
        raise
    if args.trace:
        Path(args.trace).write_text(trace.to_json() + "\n", encoding="utf-8")
    print(outcome)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sample is not None:
        overrides["sample"] = args.sample
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.top_k is not None:
        overrides["top_k"] = args.top_k
    if args.dataset:
        overrides["datasets"] = [{"name": Path(p).stem, "path": p, "format": "bgl_like"} for p in args.dataset]
    cfg = resolve_config(file_cfg, overrides)
    if args.strategies:
        wanted = [s.strip() for s in args.strategies.split(",") if s.strip()]
        missing = [s for s in wanted if s not in cfg["strategies"]]
        if missing:
            raise ValueError(f"strategies not in config: {missing}")
        cfg["strategies"] = {name: cfg["strategies"][name] for name in wanted}
    if not cfg["datasets"]:
        raise ValueError("no datasets configured; pass --dataset or set datasets in the config file")
    digest = config_digest(cfg)
    embedder = build_embedder(cfg["embedder"])
    backend = build_backend(cfg["backend"])
    template = load_template(cfg["template_path"])
    seed = int(cfg["seed"])
    rows: list[evaluation.ComparisonRow] = []
    builds: dict[str, dict] = {}
    for ds in cfg["datasets"]:
        name = ds.get("name") or Path(ds["path"]).stem
        entries = load_entries(ds["path"], _canonical_format(ds.get("format", "bgl_like")))
        split = ingest.split_dataset(entries, float(cfg["test_fraction"]), seed)
        test = split.test
        if cfg["sample"] is not None:
            test = ingest.sample_test(test, int(cfg["sample"]), seed)
        labels = [e.label for e in test]
        for strategy_name, params in cfg["strategies"].items():
            plan = build_plan(strategy_name, params, seed)
            store, build_report = refset.build_reference_store(
                split.train_normals, plan, embedder, config_digest=digest
            )
            build_report.config_digest = digest
            builds[f"{name}/{strategy_name}"] = build_report.to_dict()
            outcomes = classify_batch(
                store, embedder, backend, template, test, int(cfg["top_k"]), int(cfg["in_flight"])
            )
            predictions = [outcome for outcome, _ in outcomes]
            matrix = evaluation.accumulate(predictions, labels)
            report = evaluation.metrics(matrix, config_digest=digest)
            rows.append(evaluation.ComparisonRow(dataset=name, strategy=strategy_name, report=report))
            print(
                f"dataset={name} strategy={strategy_name} precision={report.precision:.2f} "
                f"recall={report.recall:.2f} f1={report.f1:.2f} skipped={matrix.skipped}"
            )
    comparison = evaluation.compare_strategies(rows)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": cfg,
        "config_digest": digest,
        "builds": builds,
        "comparison": comparison.to_dict(),
    }
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "comparison.csv").write_text(comparison.to_csv(), encoding="utf-8")
    print(f"report={out_dir / 'report.json'}")
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    store = VectorStore.load(args.store)
    vectors = [rec.vector for rec in store.records()]
    model = refset.kmeans(vectors, args.k, args.seed)
    projection = refset.project_2d(vectors, model, seed=args.seed)
    refset.write_projection_csv(args.out, projection)
    if args.elbow_csv:
        _, curve = refset.elbow_select_k(vectors, args.k_min, args.k_max, args.seed)
        refset.write_elbow_csv(args.elbow_csv, curve)
    if projection.degenerate:
        print("warning: input is rank-deficient; missing component(s) zeroed", file=sys.stderr)
    print(f"points={len(projection.points)} k={args.k} out={args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_embedder_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedder", choices=["hashing", "remote"], default="hashing")
    parser.add_argument("--dim", type=int, default=256, help="embedding dimension")
    parser.add_argument("--model", default="", help="remote embedder/backend model name")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raglog", description="Retrieval-augmented log anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw log file into a JSONL dataset")
    p.add_argument("--input", required=True, help="raw log file, one entry per line")
    p.add_argument("--format", choices=["bgl", "thunderbird", "bgl_like"], default="bgl")
    p.add_argument("--out", required=True, help="output dataset (JSON-Lines)")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--lenient", action="store_true", help="skip and count malformed lines")
    p.add_argument("--dedup", action="store_true", help="drop duplicate messages (keep first)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="deterministic train/test split of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build", help="build the normal-only reference store")
    p.add_argument("--dataset", required=True, help="dataset JSONL or raw log file")
    p.add_argument("--format", choices=["bgl", "thunderbird", "bgl_like"], default="bgl")
    p.add_argument("--strategy", choices=["random", "clustered"], required=True)
    p.add_argument("--n", type=int, default=None, help="random strategy: store size")
    p.add_argument("--k", default="auto", help="clustered strategy: cluster count or 'auto'")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--per-cluster", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="store file path")
    p.add_argument("--report", default=None, help="BuildReport JSON path")
    _add_embedder_args(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("classify", help="classify one log line against a store")
    p.add_argument("--store", required=True)
    p.add_argument("--line", required=True, help="log message text to classify")
    p.add_argument("--backend", choices=["mock", "remote"], default="mock")
    p.add_argument("--threshold", type=float, default=ragqa.DEFAULT_MOCK_THRESHOLD)
    p.add_argument("--temperature", type=float, default=ragqa.DEFAULT_TEMPERATURE)
    p.add_argument("--template", default=None, help="prompt template file")
    p.add_argument("--top-k", type=int, default=ragqa.DEFAULT_TOP_K)
    p.add_argument("--trace", default=None, help="write the classification trace JSON here")
    _add_embedder_args(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="end-to-end evaluation with strategy comparison")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--dataset", action="append", default=None, help="dataset path (repeatable)")
    p.add_argument("--strategies", default=None, help="comma-separated subset of configured strategies")
    p.add_argument("--sample", type=int, default=None, help="test entries to sample")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="2D cluster map CSV from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--k", type=int, required=True, help="cluster count for the map")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--elbow-csv", default=None, help="also write the elbow curve CSV here")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.set_defaults(func=cmd_project)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures are exit code 1, with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
