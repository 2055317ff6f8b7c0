from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from scree.app import build_diagnostics, negative_label_for
from scree.classifiers import ClassifierRegistry
from scree.cli import main, parse_args
from scree.env import EnvironmentInfo
from scree.storage import DocStore


def write_labels(path: Path, rows: list[tuple[str, str]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("id", "label"))
        writer.writerows(rows)
    return path


def test_parse_args_defaults() -> None:
    args = parse_args(["tune", "--pairs", "pairs.csv"])
    assert (args.t_min, args.t_max, args.step, args.max_distance) == (0.0, 12.0, 0.1, 12.5)
    args = parse_args(["bench", "--target", "geolocation_tagger", "--out", "out"])
    assert args.cache == ["none", "cold", "warm"]
    assert args.loads == "2^0..2^12"
    assert args.prefill == [0]


def test_help_lists_defaults(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit):
        parse_args(["bench", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    assert "Repeats per load. (default: 5)" in text
    assert "(default: none cold warm)" not in text
    assert "(default: all)" in text
    assert "(default: 0)" in text
    assert "(default: None)" not in text


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--gold", "gold.csv"],
        ["bench", "--target", "junk_filter", "--out", "o", "--repeats", "0"],
        ["bench", "--target", "ocr", "--out", "o"],
        ["tune", "--pairs", "p.csv", "--step", "0"],
        ["--log-level", "chatty", "diagnose"],
    ],
)
def test_parse_args_rejects(argv: list[str]) -> None:
    with pytest.raises(SystemExit):
        parse_args(argv)


def test_negative_label_for() -> None:
    assert negative_label_for("landslide") == "not-landslide"
    assert negative_label_for("relevant") == "not-relevant"
    assert negative_label_for("flood") == "not-flood"


def test_tune_prints_curve(deployment, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["tune", "--pairs", str(deployment.pairs_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "threshold,mcc"
    assert len(lines) == 1 + 121 + 1
    assert lines[1].startswith("0,")
    label, threshold, score = lines[-1].split(",")
    assert label == "best"
    assert 4.0 < float(threshold) < 9.0
    assert float(score) > 0.7


def test_tune_missing_file(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["tune", "--pairs", str(tmp_path / "nope.csv")]) == 1
    assert capsys.readouterr().err.startswith("scree: ")


def test_evaluate_writes_table_and_json(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    gold = write_labels(tmp_path / "gold.csv", [("a", "landslide"), ("b", "not-landslide"), ("c", "landslide")])
    pred = write_labels(tmp_path / "pred.csv", [("a", "landslide"), ("b", "landslide"), ("c", "landslide")])
    out = tmp_path / "report" / "eval.json"
    assert main(["evaluate", "--pred", str(pred), "--gold", str(gold), "--json", str(out)]) == 0
    table = capsys.readouterr().out
    assert "not-landslide" in table
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["confusion"] == {"tp": 2, "fp": 1, "fn": 0, "tn": 0}
    assert payload["classes"]["landslide"]["recall"] == 100.0


def test_evaluate_lists_unmatched_ids(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    gold = write_labels(tmp_path / "gold.csv", [("a", "landslide")])
    pred = write_labels(tmp_path / "pred.csv", [("z", "landslide")])
    assert main(["evaluate", "--pred", str(pred), "--gold", str(gold)]) == 1
    err = capsys.readouterr().err
    assert "missing gold: z" in err
    assert "missing predictions: a" in err


def test_lexicon_baseline(deployment, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["evaluate", "--gold", str(deployment.gold_path), "--lexicon-baseline"]) == 0
    recall_row = capsys.readouterr().out.splitlines()[1].split()
    assert recall_row[0] == "landslide"
    assert recall_row[2] == "100.00"


def test_run_then_evaluate(deployment, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "store"
    assert main(["run", "--config", str(deployment.config_path), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "junk removed: 76.00%" in stdout
    report = json.loads((out / "run_report.json").read_text(encoding="utf-8"))
    assert report["ok"] is True

    with open(deployment.gold_path, newline="", encoding="utf-8") as handle:
        gold_ids = {row["id"] for row in csv.DictReader(handle)}
    with DocStore(out / "images.log") as store:
        predictions = [(image_id, doc["landslide"]["label"]) for image_id, doc in store.scan() if image_id in gold_ids]
    pred = write_labels(tmp_path / "pred.csv", predictions)
    assert main(["evaluate", "--pred", str(pred), "--gold", str(deployment.gold_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-2].split() == ["accuracy", "100.00"]


def test_run_with_bad_config(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = tmp_path / "config.json"
    config.write_text('{"keywords_path": "k.csv", "fetcher": "ftp"}', encoding="utf-8")
    assert main(["run", "--config", str(config)]) == 1
    assert "fetcher" in capsys.readouterr().err


def test_generate(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["generate", "--out", str(tmp_path / "deploy"), "--images", "100", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "100 images (76 junk, 9 duplicates" in out
    assert (tmp_path / "deploy" / "config.json").is_file()


def test_bench_command(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    argv = ["bench", "--target", "junk_filter", "--loads", "1,2", "--repeats", "2", "--dim", "8", "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = (tmp_path / "bench.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 5
    assert "bench_summary.json" in capsys.readouterr().out


def test_diagnose(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["diagnose"]) == 0
    out = capsys.readouterr().out
    assert "Environment:" in out
    assert "classifiers: stub, lookup" in out


def test_build_diagnostics_reports_missing_packages(tmp_path: Path) -> None:
    env = EnvironmentInfo(
        python_version="3.11.0",
        state_dir=tmp_path / "state",
        image_cache_dir=tmp_path / "cache",
        bench_timeout=60.0,
        log_level="WARNING",
        is_tty=False,
        packages={"numpy", "requests"},
    )
    text = build_diagnostics(ClassifierRegistry(), env)
    assert "  geopy: missing" in text
    assert "  numpy: available" in text
    assert "geocoder nominatim: unavailable (geopy missing)" in text
    assert "fetcher http: available" in text
    assert "SCREE_BENCH_TIMEOUT: 60s" in text
