import pytest

from segground.forge import Perspective, derive_seed, read_manifest
from segground.knowledge import load_knowledge
from segground.prompts import build_generation_prompt
from segground.provider import StubCompletionProvider, write_stub_response

FIXTURES = "fixtures"


def canned_completion(labels) -> str:
    """Deterministic Q&A text that mentions every label (so it grounds)."""
    mention = " and ".join(f"the {label}" for label in labels)
    details = " ".join(f"The {label} is clearly delineated in the scan." for label in labels)
    return (
        "Question: Which structures are visible here?\n"
        f"Answer: The image shows {mention}. {details}"
    )


def build_stub_dir(directory, records, kb, run_seed=0):
    """Write stub completions for every (record, P3/P4) prompt of a run."""
    for record in records:
        for perspective in ("P3", "P4"):
            seed = derive_seed(run_seed, f"{record.id}:{perspective}")
            prompt = build_generation_prompt(
                perspective, record.labels(), kb, rng_seed=seed
            )
            write_stub_response(directory, prompt.text, canned_completion(record.labels()))
    return directory


@pytest.fixture(scope="session")
def manifest_records():
    return read_manifest(f"{FIXTURES}/manifest_50.jsonl")


@pytest.fixture(scope="session")
def kb():
    return load_knowledge(f"{FIXTURES}/knowledge.json")


@pytest.fixture(scope="session")
def stub_dir(tmp_path_factory, manifest_records, kb):
    directory = tmp_path_factory.mktemp("stub")
    build_stub_dir(directory, manifest_records, kb, run_seed=0)
    return directory


@pytest.fixture(scope="session")
def stub_provider(stub_dir):
    return StubCompletionProvider(stub_dir)


@pytest.fixture(scope="session")
def qa_perspectives():
    return (Perspective.P3, Perspective.P4)
