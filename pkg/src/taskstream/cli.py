"""Experiment runner: configuration, orchestration, persistence, reports.

Results are laid out one directory per (strategy, direction, distance) cell
so runs are resumable and cells can execute independently. Result tables are
byte-deterministic for a given config; wall-clock timestamps appear only in
run.log.

Subcommands: split, run, sweep-k, report, fixed-split, gen-synthetic,
validate, conformance. TASKSTREAM_WORKERS sets the default worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shlex
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import (
    Corpus,
    SyntheticSpec,
    gen_synthetic_corpus,
    load_corpus,
    split_corpus,
    write_corpus,
)
from .external import ExternalLearner
from .learner import (
    EchoLearner,
    Hyper,
    LearnerHandle,
    PerfectMemorizer,
    WindowedMemorizer,
    conformance_suite,
)
from .protocol import (
    DIRECTIONS,
    FIXED_SPLIT_MODES,
    TransferConfig,
    category_breakdown,
    fixed_split_eval,
    transfer_gain,
)
from .scheduler import STRATEGIES, RunLog, initialize
from .seeding import derive_seed

LEARNER_KINDS = ("perfect_memorizer", "windowed_memorizer", "echo", "external")

WORKERS_ENV = "TASKSTREAM_WORKERS"

COMPLETE_MARKER = "_COMPLETE"


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    corpus_dir: str | None = None
    synthetic: SyntheticSpec | None = None
    synthetic_seed: int = 0
    k: int = 5
    master_seed: int = 0
    m: int = 10
    distances: tuple[int, ...] = (1, 10, 20, 30, 40)
    directions: tuple[str, ...] = DIRECTIONS
    strategies: tuple[str, ...] = STRATEGIES
    learner: str = "perfect_memorizer"
    window_capacity: int = 2
    worker_cmd: tuple[str, ...] = ()
    train_s: Hyper = field(default_factory=lambda: Hyper(5e-5, 3, 5, 1024))
    continual: Hyper = field(default_factory=lambda: Hyper(5e-5, 3, 2, 1024))
    history: Hyper = field(default_factory=lambda: Hyper(5e-6, 1, 2, 1024))
    eval_n: int = 1000
    history_offset: int = 2
    workers: int = 1

    def __post_init__(self) -> None:
        if (self.corpus_dir is None) == (self.synthetic is None):
            raise ValueError("config needs exactly one of corpus_dir or synthetic")
        if self.learner not in LEARNER_KINDS:
            raise ValueError(f"learner must be one of {LEARNER_KINDS}, got {self.learner!r}")
        if self.learner == "external" and not self.worker_cmd:
            raise ValueError("external learner needs worker_cmd")
        for strategy in self.strategies:
            if strategy not in STRATEGIES:
                raise ValueError(f"unknown strategy: {strategy!r}")
        for direction in self.directions:
            if direction not in DIRECTIONS:
                raise ValueError(f"unknown direction: {direction!r}")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["synthetic"] = dataclasses.asdict(self.synthetic) if self.synthetic else None
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if doc.get("synthetic") is not None:
            syn = dict(doc["synthetic"])
            if "categories" in syn:
                syn["categories"] = tuple(syn["categories"])
            doc["synthetic"] = SyntheticSpec(**syn)
        for key in ("train_s", "continual", "history"):
            if isinstance(doc.get(key), dict):
                doc[key] = Hyper(**doc[key])
        for key in ("distances", "directions", "strategies", "worker_cmd"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def canonical_json(doc: object) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def make_learner(config: ExperimentConfig) -> LearnerHandle:
    if config.learner == "perfect_memorizer":
        return PerfectMemorizer()
    if config.learner == "windowed_memorizer":
        return WindowedMemorizer(capacity=config.window_capacity)
    if config.learner == "echo":
        return EchoLearner()
    return ExternalLearner(config.worker_cmd)


def _load_experiment_corpus(config: ExperimentConfig) -> Corpus:
    if config.synthetic is not None:
        return gen_synthetic_corpus(config.synthetic, config.synthetic_seed)
    loaded = load_corpus(config.corpus_dir)
    for diag in loaded.diagnostics:
        print(f"corpus diagnostic: {diag}", file=sys.stderr)
    if not loaded.corpus.tasks:
        raise ValueError(f"no loadable tasks under {config.corpus_dir}")
    return loaded.corpus


class _RunLogFile:
    """Timestamped operational log; never part of the result tables."""

    def __init__(self, path: Path) -> None:
        self._path = path

    def event(self, kind: str, **fields: object) -> None:
        record = {"ts": time.time(), "event": kind, **fields}
        with self._path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _record_line(record) -> str:
    doc = dataclasses.asdict(record)
    doc.pop("phases", None)
    return json.dumps(doc, sort_keys=True)


def _phase_lines(records) -> list[str]:
    lines = []
    for record in records:
        for event in record.phases:
            doc = {
                "distance": record.distance,
                "task_id": record.task_id,
                "rep": record.rep,
                **dataclasses.asdict(event),
            }
            lines.append(json.dumps(doc, sort_keys=True))
    return lines


def run_experiment(config: ExperimentConfig) -> Path:
    """Execute every (strategy, direction, distance) cell, resuming completed ones."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    config_text = canonical_json(config.to_dict())
    config_path = out / "config.json"
    if config_path.exists():
        if config_path.read_text(encoding="utf-8") != config_text:
            raise ValueError(f"{config_path} holds a different config; refusing to resume")
    else:
        config_path.write_text(config_text, encoding="utf-8")
    oplog = _RunLogFile(out / "run.log")
    oplog.event("start", workers=config.workers)

    corpus = _load_experiment_corpus(config)
    if not 1 <= config.k < len(corpus.tasks):
        raise ValueError(f"k={config.k} out of range for a corpus of {len(corpus.tasks)} tasks")
    split = split_corpus(corpus, config.k, derive_seed(config.master_seed, "split"))
    (out / "split.json").write_text(
        canonical_json(
            {
                "k": config.k,
                "train_tasks": [t.task_id for t in split.train_tasks],
                "unseen_tasks": [t.task_id for t in split.unseen_tasks],
            }
        ),
        encoding="utf-8",
    )

    init_log = RunLog()
    base = initialize(split.train_tasks, make_learner(config), config.train_s, log=init_log)
    (out / "init_phases.jsonl").write_text(
        "".join(json.dumps(dataclasses.asdict(e), sort_keys=True) + "\n" for e in init_log.events),
        encoding="utf-8",
    )

    clone_lock = threading.Lock()

    def factory() -> LearnerHandle:
        with clone_lock:
            return base.clone()

    for strategy in config.strategies:
        for direction in config.directions:
            for distance in config.distances:
                cell = out / "cells" / strategy / direction / f"i{distance:03d}"
                if (cell / COMPLETE_MARKER).exists():
                    oplog.event("cell_skipped", cell=str(cell))
                    continue
                report = transfer_gain(
                    factory,
                    split.unseen_tasks,
                    TransferConfig(
                        m=config.m,
                        distances=(distance,),
                        direction=direction,
                        master_seed=config.master_seed,
                        eval_n=config.eval_n,
                    ),
                    strategy,
                    hyper=config.continual,
                    history_hyper=config.history,
                    history_offset=config.history_offset,
                    max_workers=config.workers,
                    collect_phases=True,
                )
                cell.mkdir(parents=True, exist_ok=True)
                (cell / "records.jsonl").write_text(
                    "".join(_record_line(r) + "\n" for r in report.records), encoding="utf-8"
                )
                (cell / "phases.jsonl").write_text(
                    "".join(line + "\n" for line in _phase_lines(report.records)),
                    encoding="utf-8",
                )
                (cell / COMPLETE_MARKER).write_text("complete\n", encoding="utf-8")
                oplog.event("cell_done", cell=str(cell), coverage=report.coverage)

    render_report(out)
    oplog.event("finish")
    return out


# --------------------------------------------------------------------------
# Reporting (consumes only the persisted record tables)

def _read_records(result_dir: Path) -> list[dict]:
    rows: list[dict] = []
    for path in sorted(result_dir.glob("cells/*/*/i*/records.jsonl")):
        strategy = path.parent.parent.parent.name
        for line in path.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            row["strategy"] = strategy
            rows.append(row)
    return rows


def _aggregate_rows(rows: Sequence[dict]) -> list[dict]:
    """Recompute g_i mean/std across tasks from raw per-(t, j) rows."""
    from .protocol import ChainRecord, aggregate_records

    out: list[dict] = []
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["strategy"], row["direction"]), []).append(row)
    for (strategy, direction), group in sorted(groups.items()):
        records = tuple(
            ChainRecord(
                direction=row["direction"],
                distance=row["distance"],
                task_id=row["task_id"],
                category=row["category"],
                rep=row["rep"],
                k=row["k"],
                score_before=row["score_before"],
                score_after=row["score_after"],
                gain=row["gain"],
                failed=row["failed"],
                error=row["error"],
            )
            for row in sorted(group, key=lambda r: (r["distance"], r["task_id"], r["rep"]))
        )
        task_gains, summaries, coverage, _ = aggregate_records(records)
        for summary in summaries:
            out.append(
                {
                    "strategy": strategy,
                    "direction": direction,
                    "distance": summary.distance,
                    "mean": summary.mean,
                    "std": summary.std,
                    "tasks": summary.tasks,
                    "coverage": coverage,
                }
            )
        categories: dict[tuple[int, str], list[float]] = {}
        for gain in task_gains:
            categories.setdefault((gain.distance, gain.category), []).append(gain.mean_gain)
        for (distance, category), gains in sorted(categories.items()):
            out.append(
                {
                    "strategy": strategy,
                    "direction": direction,
                    "distance": distance,
                    "category": category,
                    "mean": sum(gains) / len(gains),
                    "tasks": len(gains),
                }
            )
    return out


def render_report(result_dir: str | Path) -> Path:
    """Write human- and machine-readable gain tables plus plot data."""
    result_dir = Path(result_dir)
    rows = _read_records(result_dir)
    if not rows and not (result_dir / "cells").exists():
        raise FileNotFoundError(f"no result tables under {result_dir}")
    aggregated = _aggregate_rows(rows)
    overall = [r for r in aggregated if "category" not in r]
    by_category = [r for r in aggregated if "category" in r]

    report_dir = result_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    summary_lines = ["strategy\tdirection\tdistance\tmean\tstd\ttasks\tcoverage"]
    for r in overall:
        summary_lines.append(
            f"{r['strategy']}\t{r['direction']}\t{r['distance']}\t"
            f"{r['mean']!r}\t{r['std']!r}\t{r['tasks']}\t{r['coverage']!r}"
        )
    (report_dir / "summary.tsv").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")

    category_lines = ["strategy\tdirection\tdistance\tcategory\tmean\ttasks"]
    for r in by_category:
        category_lines.append(
            f"{r['strategy']}\t{r['direction']}\t{r['distance']}\t{r['category']}\t"
            f"{r['mean']!r}\t{r['tasks']}"
        )
    (report_dir / "categories.tsv").write_text(
        "\n".join(category_lines) + "\n", encoding="utf-8"
    )

    for direction in DIRECTIONS:
        plot_lines = ["distance\tstrategy\tmean\tstd"]
        for r in overall:
            if r["direction"] == direction:
                plot_lines.append(
                    f"{r['distance']}\t{r['strategy']}\t{r['mean']!r}\t{r['std']!r}"
                )
        (report_dir / f"plot_{direction}.tsv").write_text(
            "\n".join(plot_lines) + "\n", encoding="utf-8"
        )

    pretty = ["gain grid (mean +/- std across tasks, ROUGE-L points)", ""]
    for (strategy, direction) in sorted({(r["strategy"], r["direction"]) for r in overall}):
        cells = [r for r in overall if r["strategy"] == strategy and r["direction"] == direction]
        cells.sort(key=lambda r: r["distance"])
        rendered = "  ".join(
            f"g{c['distance']}={c['mean']:.2f}+/-{c['std']:.2f}" for c in cells
        )
        pretty.append(f"{strategy:>14} {direction:>8}: {rendered}")
    (report_dir / "summary.txt").write_text("\n".join(pretty) + "\n", encoding="utf-8")
    return report_dir


def sweep_k(config: ExperimentConfig, k_values: Sequence[int]) -> Path:
    """One forward run per k with derived seeds; emits a k-vs-gain table."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for k in k_values:
        sub = dataclasses.replace(
            config,
            k=k,
            out_dir=str(out / f"k{k:03d}"),
            master_seed=derive_seed(config.master_seed, "sweep", k),
            directions=("forward",),
        )
        run_experiment(sub)
        for row in _aggregate_rows(_read_records(Path(sub.out_dir))):
            if "category" not in row:
                rows.append({"k": k, **row})
    lines = ["k\tstrategy\tdistance\tmean\tstd"]
    for r in rows:
        lines.append(f"{r['k']}\t{r['strategy']}\t{r['distance']}\t{r['mean']!r}\t{r['std']!r}")
    sweep_path = out / "sweep_k.tsv"
    sweep_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return sweep_path


# --------------------------------------------------------------------------
# Argument parsing

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--corpus", help="task-file directory")
    p.add_argument("--synthetic", action="store_true", help="use a generated corpus")
    p.add_argument("--tasks-per-category", type=int, default=2)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--overlap", type=float, default=0.4)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--k", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--distances", help="comma-separated transfer distances")
    p.add_argument("--directions", help="comma-separated subset of forward,backward")
    p.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
    p.add_argument("--learner", choices=LEARNER_KINDS)
    p.add_argument("--window-capacity", type=int)
    p.add_argument("--worker-cmd", help="external worker command (shell-quoted)")
    p.add_argument("--eval-n", type=int)
    p.add_argument("--history-offset", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.corpus:
        base["corpus_dir"] = args.corpus
        base["synthetic"] = None
    if args.synthetic:
        base["synthetic"] = {
            "tasks_per_category": args.tasks_per_category,
            "instances_per_task": args.instances,
            "overlap": args.overlap,
            "negatives_per_task": args.negatives,
        }
        base["corpus_dir"] = None
        base["synthetic_seed"] = args.synthetic_seed
    simple = {
        "k": args.k,
        "master_seed": args.master_seed,
        "m": args.m,
        "learner": args.learner,
        "window_capacity": args.window_capacity,
        "eval_n": args.eval_n,
        "history_offset": args.history_offset,
        "workers": args.workers,
        "out_dir": args.out,
    }
    for key, value in simple.items():
        if value is not None:
            base[key] = value
    if args.distances:
        base["distances"] = [int(x) for x in args.distances.split(",")]
    if args.directions:
        base["directions"] = args.directions.split(",")
    if args.strategies:
        base["strategies"] = args.strategies.split(",")
    if args.worker_cmd:
        base["worker_cmd"] = shlex.split(args.worker_cmd)
    if "workers" not in base:
        base["workers"] = _default_workers()
    if "out_dir" not in base or not base["out_dir"]:
        raise ValueError("an output directory is required (--out)")
    return ExperimentConfig.from_dict(base)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="taskstream",
        description="simulate and score continual learning from task instructions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks-per-category", type=int, default=2)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--overlap", type=float, default=0.4)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("validate", help="load a corpus and report diagnostics")
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("split", help="print a seeded train/unseen split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="run a full transfer-gain experiment")
    _add_config_flags(p)

    p = sub.add_parser("sweep-k", help="run the experiment for several k values")
    _add_config_flags(p)
    p.add_argument("--k-values", required=True, help="comma-separated k values")

    p = sub.add_parser("report", help="re-render reports from persisted tables")
    p.add_argument("--result-dir", required=True)

    p = sub.add_parser("fixed-split", help="category-chain protocol on a fixed test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--test-tasks", required=True, help="file with one test task id per line")
    p.add_argument("--mode", choices=FIXED_SPLIT_MODES, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="replay")
    p.add_argument("--learner", choices=LEARNER_KINDS, default="perfect_memorizer")
    p.add_argument("--window-capacity", type=int, default=2)
    p.add_argument("--worker-cmd")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-n", type=int, default=1000)

    p = sub.add_parser("conformance", help="run the learner conformance suite")
    p.add_argument("--learner", choices=LEARNER_KINDS, required=True)
    p.add_argument("--window-capacity", type=int, default=2)
    p.add_argument("--worker-cmd")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gen-synthetic":
        spec = SyntheticSpec(
            tasks_per_category=args.tasks_per_category,
            instances_per_task=args.instances,
            overlap=args.overlap,
            negatives_per_task=args.negatives,
        )
        corpus = gen_synthetic_corpus(spec, args.seed)
        written = write_corpus(corpus, args.out)
        print(f"wrote {len(written)} task files to {args.out}")
        return 0

    if args.command == "validate":
        loaded = load_corpus(args.corpus)
        for diag in loaded.diagnostics:
            print(str(diag))
        print(f"{len(loaded.corpus.tasks)} valid tasks, {len(loaded.diagnostics)} diagnostics")
        return 0 if not loaded.diagnostics else 1

    if args.command == "split":
        loaded = load_corpus(args.corpus)
        split = split_corpus(loaded.corpus, args.k, args.seed)
        print(
            canonical_json(
                {
                    "seed": args.seed,
                    "train_tasks": [t.task_id for t in split.train_tasks],
                    "unseen_tasks": [t.task_id for t in split.unseen_tasks],
                }
            ),
            end="",
        )
        return 0

    if args.command == "run":
        out = run_experiment(_config_from_args(args))
        print(f"results in {out}")
        return 0

    if args.command == "sweep-k":
        config = _config_from_args(args)
        k_values = [int(x) for x in args.k_values.split(",")]
        table = sweep_k(config, k_values)
        print(f"sweep table at {table}")
        return 0

    if args.command == "report":
        report_dir = render_report(args.result_dir)
        print((report_dir / "summary.txt").read_text(encoding="utf-8"), end="")
        return 0

    if args.command == "fixed-split":
        loaded = load_corpus(args.corpus)
        test_ids = [
            line.strip()
            for line in Path(args.test_tasks).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

        def factory() -> LearnerHandle:
            if args.learner == "external":
                return ExternalLearner(shlex.split(args.worker_cmd or ""))
            if args.learner == "windowed_memorizer":
                return WindowedMemorizer(args.window_capacity)
            return {"perfect_memorizer": PerfectMemorizer, "echo": EchoLearner}[args.learner]()

        report = fixed_split_eval(
            loaded.corpus,
            test_ids,
            args.mode,
            factory,
            strategy=args.strategy,
            hyper=Hyper(5e-5, 3, 2, 1024),
            reps=args.reps,
            seed=args.seed,
            eval_n=args.eval_n,
        )
        print("category\tmean\tstd\treps\ttasks")
        for row in report.rows:
            print(f"{row.category}\t{row.mean!r}\t{row.std!r}\t{row.reps}\t{row.tasks}")
        return 0

    if args.command == "conformance":
        if args.learner == "external":
            handle: LearnerHandle = ExternalLearner(shlex.split(args.worker_cmd or ""))
        elif args.learner == "windowed_memorizer":
            handle = WindowedMemorizer(args.window_capacity)
        else:
            handle = {"perfect_memorizer": PerfectMemorizer, "echo": EchoLearner}[args.learner]()
        report = conformance_suite(handle)
        for check in report.checks:
            status = "PASS" if check.passed else "FAIL"
            detail = f"  ({check.detail})" if check.detail else ""
            print(f"{status} {check.name}{detail}")
        return 0 if report.ok else 1

    raise ValueError(f"unknown command: {args.command}")


if __name__ == "__main__":
    sys.exit(main())
