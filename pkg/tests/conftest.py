from __future__ import annotations

import copy
import io
import json
from pathlib import Path

import pytest
from PIL import Image

from abacgen.generator import dataset_from_document
from abacgen.policy import policy_from_strings
from abacgen.spec_model import parse_spec

FIXTURES = Path(__file__).parent / "fixtures"

EXAMPLE_SPEC = b"""{
  "subject_size": 3, "object_size": 3, "environment_size": 2,
  "permit_rules_count": 1, "deny_rules_count": 1,
  "subject_attributes_count": 2, "object_attributes_count": 2,
  "environment_attributes_count": 1,
  "subject_attributes_values": [2, 4],
  "object_attributes_values": [2, 1],
  "environment_attributes_values": [2],
  "subject_distributions": [
    { "distribution": "U" },
    { "distribution": "N", "mean": 2, "variance": 1 }
  ],
  "object_distributions": [
    { "distribution": "P", "lambda": 1 },
    { "distribution": "U" }
  ],
  "environment_distributions": [{ "distribution": "U" }]
}
"""

EXAMPLE_OUTPUT = {
    "S": ["S_1", "S_2", "S_3"], "O": ["O_1", "O_2", "O_3"], "E": ["E_1", "E_2"],
    "SA": ["SA_1", "SA_2"], "OA": ["OA_1", "OA_2"], "EA": ["EA_1"],
    "SAV": {
        "SA_1": ["SA_1_1", "SA_1_2"],
        "SA_2": ["SA_2_1", "SA_2_2", "SA_2_3", "SA_2_4"],
    },
    "OAV": {"OA_1": ["OA_1_1", "OA_1_2"], "OA_2": ["OA_2_1"]},
    "EAV": {"EA_1": ["EA_1_1", "EA_1_2"]},
    "SV": {"S_1": ["SA_1_2", "SA_2_3"], "S_2": ["SA_1_2", "SA_2_4"], "S_3": ["SA_1_1", "SA_2_3"]},
    "OV": {"O_1": ["OA_1_2", "OA_2_1"], "O_2": ["OA_1_1", "OA_2_1"], "O_3": ["OA_1_1", "OA_2_1"]},
    "EV": {"E_1": ["EA_1_2"], "E_2": ["EA_1_2"]},
    "permit_rules": ["SA_1=SA_1_2, SA_2=SA_2_4, OA_1=OA_1_1, OA_2=OA_2_1, EA_1=EA_1_2"],
    "deny_rules": ["SA_1=SA_1_1, SA_2=SA_2_3, OA_1=OA_1_1, OA_2=OA_2_1, EA_1=EA_1_2"],
}


@pytest.fixture
def example_spec_bytes() -> bytes:
    return EXAMPLE_SPEC


@pytest.fixture
def example_spec():
    return parse_spec(EXAMPLE_SPEC)


@pytest.fixture
def example_output_doc() -> dict:
    return copy.deepcopy(EXAMPLE_OUTPUT)


@pytest.fixture
def example_output_dataset():
    return dataset_from_document(EXAMPLE_OUTPUT)


@pytest.fixture
def example_output_policy(example_output_dataset):
    return policy_from_strings(EXAMPLE_OUTPUT["permit_rules"], EXAMPLE_OUTPUT["deny_rules"], example_output_dataset)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mock_script() -> dict:
    return json.loads((FIXTURES / "mock_script.json").read_text())


@pytest.fixture
def minimal_doc() -> dict:
    return json.loads((FIXTURES / "minimal.json").read_text())


def png_bytes(width: int = 64, height: int = 48, color=(255, 255, 255)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


def jpeg_bytes(width: int = 64, height: int = 48) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), (10, 20, 30)).save(buf, format="JPEG")
    return buf.getvalue()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
