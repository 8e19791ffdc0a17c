from __future__ import annotations

import json
from pathlib import Path

import pytest

from crrefine.crparser import ChangeRequest, parse_cr_text
from crrefine.modelgateway import ModelHandle, ModelProfile, build_handle

FIXTURES = Path(__file__).parent / "fixtures"
PIPELINE = FIXTURES / "pipeline"


@pytest.fixture(scope="session")
def pipeline_dir() -> Path:
    return PIPELINE


@pytest.fixture(scope="session")
def pipeline_crs() -> list[ChangeRequest]:
    crs = []
    for path in sorted(PIPELINE.glob("*.txt")):
        if path.name == "eval_ids.txt":
            continue
        crs.append(parse_cr_text(path.read_text(encoding="utf-8"), doc_id=path.stem))
    assert len(crs) == 10
    return crs


@pytest.fixture(scope="session")
def general_docs() -> list[str]:
    lines = (PIPELINE / "general_docs.jsonl").read_text(encoding="utf-8").splitlines()
    return [json.loads(line)["text"] for line in lines]


def make_handle(
    name: str = "mock-chat",
    *,
    backend: str = "mock",
    temperature: float = 0.0,
    top_p: float = 1.0,
    chat_script=None,
    embed_script=None,
    embed_dim: int = 8,
    **extra,
) -> ModelHandle:
    profile = ModelProfile(
        name=name,
        backend=backend,
        model_id=name,
        temperature=temperature,
        top_p=top_p,
        embed_dim=embed_dim,
        **extra,
    )
    return build_handle(profile, chat_script=chat_script, embed_script=embed_script)


@pytest.fixture
def mock_handle() -> ModelHandle:
    return make_handle()


@pytest.fixture
def sampler_handle() -> ModelHandle:
    return make_handle("mock-sampler", temperature=0.8, top_p=0.95)
