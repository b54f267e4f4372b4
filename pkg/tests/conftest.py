"""Shared fixtures: small dictionaries and representations, built once."""

from __future__ import annotations

import os
import sys

import pytest

os.environ.setdefault("PMT_TEST_KEYS", "pytest")

from carousel_pmt.core import PmtParams, generate_dictionary  # noqa: E402
from carousel_pmt.reprs import (build_bloom, build_cuckoo4,  # noqa: E402
                                build_seqdiff, serialize)


@pytest.fixture(scope="session")
def dict_4k():
    return generate_dictionary(4096, seed=7)


@pytest.fixture(scope="session")
def params_4k():
    return PmtParams(n=4096, epsilon=10)


@pytest.fixture(scope="session")
def params_4k_e14():
    return PmtParams(n=4096, epsilon=14)


@pytest.fixture(scope="session")
def reps_4k(dict_4k, params_4k):
    """All six scheme variants over the same n=2^12 dictionary."""
    return {
        "seqdiff": build_seqdiff(dict_4k, params_4k, seed=3),
        "seqdiff-hashed": build_seqdiff(dict_4k, params_4k, seed=3, hashed=True),
        "bloom": build_bloom(dict_4k, params_4k, seed=3),
        "bloom-part": build_bloom(dict_4k, params_4k, seed=3, partitioned=True),
        "cuckoo": build_cuckoo4(dict_4k, params_4k, seed=3),
        "cuckoo-part": build_cuckoo4(dict_4k, params_4k, seed=3, partitioned=True),
    }


@pytest.fixture(scope="session")
def blobs_4k(reps_4k):
    return {name: serialize(rep) for name, rep in reps_4k.items()}


@pytest.fixture(scope="session")
def dict_64k():
    return generate_dictionary(1 << 16, seed=7)


def pytest_terminal_summary(terminalreporter):
    """Reprint the acceptance scoreboard outside capture."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
