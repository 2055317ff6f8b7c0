from __future__ import annotations

import json
import sys
from typing import Any

from scree import bench
from scree.classifiers import ClassifierRegistry
from scree.classifiers.metrics import (
    EvaluationError,
    evaluate,
    format_table,
    lexicon_baseline,
    load_labels,
    metrics_from_confusion,
)
from scree.config import EXTRACTOR_BACKENDS, FETCHER_BACKENDS, GEOCODER_BACKENDS, load_config
from scree.dedup import load_labeled_pairs, tune_threshold
from scree.env import BENCH_TIMEOUT_VAR, KNOWN_PACKAGES, LOG_LEVEL_VAR, EnvironmentInfo, detect_environment, has_package
from scree.models import TASK_LABELS, ScreeError
from scree.orchestrator import RunReport, run_pipeline
from scree.synth import generate_deployment

# Backends that only work when an optional package is importable.
OPTIONAL_BACKEND_PACKAGES = {
    "geocoder nominatim": "geopy",
    "fetcher http": "requests",
    "live stream": "tweepy",
}


def _fail(message: object) -> int:
    print(f"scree: {message}", file=sys.stderr)
    return 1


def negative_label_for(positive_label: str) -> str:
    for positive, negative in TASK_LABELS.values():
        if positive == positive_label:
            return negative
    return f"not-{positive_label}"


def format_run_summary(report: RunReport) -> str:
    funnel = report.funnel
    lines = [
        f"posts: {report.tweets.get('seen', 0)} seen, {report.tweets.get('matched', 0)} matched",
        f"images: {report.images.get('fetched', 0)} fetched, {report.persisted} stored, "
        f"{report.failed_images} failed",
        f"junk removed: {funnel.get('junk_removed_pct', 0.0):.2f}%",
        f"duplicates removed: {funnel.get('duplicate_removed_pct', 0.0):.2f}%",
        f"remaining: {funnel.get('remaining_pct', 0.0):.2f}%",
        f"landslide of remaining: {funnel.get('landslide_of_remaining_pct', 0.0):.2f}%",
        f"elapsed: {report.elapsed_s:.2f}s",
    ]
    return "\n".join(lines)


def run_run(args: Any) -> int:
    try:
        config = load_config(args.config).with_overrides(corpus_path=args.corpus, store_dir=args.out)
        report = run_pipeline(config)
        path = report.write(config.store_dir)
    except (ScreeError, OSError, ValueError) as exc:
        return _fail(exc)

    print(format_run_summary(report))
    print(f"scree: report written to {path}")
    if not report.ok:
        for failure in report.failures[:10]:
            print(f"scree: {failure}", file=sys.stderr)
        return 1
    return 0


def run_bench(args: Any) -> int:
    env = detect_environment()
    timeout = args.timeout if args.timeout is not None else env.bench_timeout
    try:
        loads = bench.parse_loads(args.loads)
        targets = bench.make_targets(
            args.target,
            dim=args.dim,
            prefill=args.prefill,
            cost=args.cost,
            delay=args.delay,
            unique_keys=args.unique_keys,
            caches=args.cache,
            seed=args.seed,
        )
        points: list[bench.LoadPoint] = []
        for target in targets:
            points.extend(
                bench.run_bench(
                    target,
                    loads,
                    repeats=args.repeats,
                    seed=args.seed,
                    timeout=timeout,
                    rate=args.rate,
                    workers=args.workers,
                    progress=env.is_tty,
                )
            )
        csv_path, summary_path = bench.emit_report(points, args.out)
    except (ScreeError, OSError, ValueError) as exc:
        return _fail(exc)

    failed = sum(1 for point in points if not point.ok)
    if failed:
        print(f"scree: {failed} of {len(points)} points failed (timeout {timeout:g}s)", file=sys.stderr)
    print(f"scree: wrote {csv_path} and {summary_path}")
    return 0


def run_tune(args: Any) -> int:
    max_distance = args.max_distance if args.max_distance >= 0 else None
    try:
        pairs = load_labeled_pairs(args.pairs, max_distance=max_distance)
        result = tune_threshold(pairs, args.t_min, args.t_max, args.step)
    except (ScreeError, OSError, ValueError) as exc:
        return _fail(exc)

    print("threshold,mcc")
    for threshold, score in result.curve:
        print(f"{threshold:g},{score:.6f}")
    print(f"best,{result.best_threshold:g},{result.best_mcc:.6f}")
    return 0


def run_evaluate(args: Any) -> int:
    positive_label = args.positive_label
    try:
        gold = load_labels(args.gold)
        if args.lexicon_baseline:
            cm = lexicon_baseline(gold, positive_label)
        else:
            cm = evaluate(load_labels(args.pred), gold, positive_label)
        report = metrics_from_confusion(cm, positive_label, negative_label_for(positive_label))
    except EvaluationError as exc:
        for name, ids in (
            ("missing gold", exc.missing_gold),
            ("missing predictions", exc.missing_predictions),
            ("repeated", exc.duplicates),
        ):
            if ids:
                print(f"scree: {name}: {', '.join(ids[:10])}", file=sys.stderr)
        return _fail(exc)
    except (ScreeError, OSError, ValueError) as exc:
        return _fail(exc)

    print(format_table(report))
    if args.json is not None:
        payload = {**report.to_dict(), "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn}}
        try:
            args.json.parent.mkdir(parents=True, exist_ok=True)
            args.json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            return _fail(exc)
    return 0


def run_generate(args: Any) -> int:
    try:
        deployment = generate_deployment(args.out, images=args.images, dim=args.dim, seed=args.seed)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    counts = deployment.counts
    print(
        f"scree: {counts.images} images ({counts.junk} junk, {counts.duplicate} duplicates, "
        f"{counts.landslide} landslides) in {counts.tweets} posts"
    )
    print(f"scree: run it with: scree run --config {deployment.config_path}")
    return 0


def run_diagnose(args: Any) -> int:
    env = detect_environment()
    registry = ClassifierRegistry()
    print(build_diagnostics(registry, env))
    return 0


def build_diagnostics(registry: ClassifierRegistry, env: EnvironmentInfo) -> str:
    lines: list[str] = []
    lines.append("Environment:")
    lines.append(f"  python: {env.python_version}")
    lines.append(f"  state_dir: {env.state_dir}")
    lines.append(f"  image_cache_dir: {env.image_cache_dir}")
    lines.append(f"  {BENCH_TIMEOUT_VAR}: {env.bench_timeout:g}s")
    lines.append(f"  {LOG_LEVEL_VAR}: {env.log_level}")
    lines.append("")
    lines.append("Packages:")
    for name in KNOWN_PACKAGES:
        lines.append(f"  {name}: {'available' if has_package(env, name) else 'missing'}")
    lines.append("")
    lines.append("Backends:")
    lines.append(f"  classifiers: {', '.join(registry.supported_backend_ids())}")
    lines.append(f"  extractors: {', '.join(EXTRACTOR_BACKENDS)}")
    lines.append(f"  fetchers: {', '.join(FETCHER_BACKENDS)}")
    lines.append(f"  geocoders: {', '.join(GEOCODER_BACKENDS)}")
    for backend, package in OPTIONAL_BACKEND_PACKAGES.items():
        available = has_package(env, package)
        lines.append(f"  {backend}: {'available' if available else f'unavailable ({package} missing)'}")
    return "\n".join(lines)
