import json

import pytest

from ics_scope.trafficgen import write_golden_corpus


@pytest.fixture(scope="session")
def golden_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("golden")
    write_golden_corpus(directory)
    return directory


@pytest.fixture(scope="session")
def golden_manifest(golden_dir):
    return json.loads((golden_dir / "manifest.json").read_text())
