from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable

import pytest

from scree.synth import Deployment, generate_deployment, write_gazetteer, write_ner_dictionaries


def tweet_doc(
    tweet_id: str,
    text: str,
    urls: Iterable[str] = (),
    lang: str = "en",
    **extra: Any,
) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": tweet_id,
        "text": text,
        "lang": lang,
        "timestamp_ms": 1_546_300_800_000,
        "user": {"name": extra.pop("author", "Hill Road Authority")},
        "entities": {"media": [{"media_url": url} for url in urls]},
    }
    doc.update(extra)
    return doc


def write_corpus(path: Path, docs: Iterable[dict[str, Any] | str]) -> Path:
    lines = [doc if isinstance(doc, str) else json.dumps(doc) for doc in docs]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def deployment(tmp_path_factory: pytest.TempPathFactory) -> Deployment:
    return generate_deployment(tmp_path_factory.mktemp("deployment"), images=1000, seed=7)


@pytest.fixture()
def gazetteer_path(tmp_path: Path) -> Path:
    return write_gazetteer(tmp_path / "gazetteer.csv")


@pytest.fixture()
def ner_dir(tmp_path: Path) -> Path:
    return write_ner_dictionaries(tmp_path / "ner")
