from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from trialkit import fixtures

settings.register_profile("repo", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def corpus():
    return fixtures.mini_corpus()


@pytest.fixture
def mock():
    return fixtures.mock_backend()


@pytest.fixture(scope="session")
def ctgov_raw():
    import json
    with open(fixtures.data_path("registry_ctgov.jsonl"), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]
