import pytest

from faultloom.config import packaged_data_path
from faultloom.taxonomy import load_taxonomy


@pytest.fixture(scope="session")
def symptoms():
    return load_taxonomy(packaged_data_path("symptom_taxonomy.yaml"))


@pytest.fixture(scope="session")
def root_causes():
    return load_taxonomy(packaged_data_path("root_cause_taxonomy.yaml"))
