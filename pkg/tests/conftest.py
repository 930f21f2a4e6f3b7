import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import recipes  # noqa: E402
from satxai.encoder import encode_model  # noqa: E402
from satxai.model import load_model  # noqa: E402
from satxai.videoharness import Dataset  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def golden_dataset():
    return Dataset.load(DATA / "golden_dataset.json")


@pytest.fixture(scope="session")
def golden_model():
    return load_model(DATA / "golden_model.json")


@pytest.fixture(scope="session")
def golden_outputs():
    return json.loads((DATA / "golden_outputs.json").read_text())


@pytest.fixture(scope="session")
def golden_inputs(golden_dataset, golden_outputs):
    feats = golden_dataset.features()
    return [feats[r["index"]] for r in golden_outputs["samples"]]


@pytest.fixture(scope="session")
def tiny_model(golden_model):
    return golden_model.with_formats(*recipes.TINY_FORMATS)


@pytest.fixture(scope="session")
def micro_model():
    return load_model(DATA / "micro_model.json")


@pytest.fixture
def and_model():
    return recipes.and_model()


@pytest.fixture
def and_enc(and_model):
    return encode_model(and_model)
