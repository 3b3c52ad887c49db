"""Shared fixtures.

Identification and synthesis take a second or two, so anything that needs
a working controller shares one session-scoped copy. Tests that mutate
state build their own.
"""

import pytest

from powermask.controller import synthesize
from powermask.plant import sys1_profile
from powermask.sysid import identify
from powermask.workloads import builtin_suite


@pytest.fixture(scope="session")
def prof():
    return sys1_profile()


@pytest.fixture(scope="session")
def suite():
    apps, videos = builtin_suite()
    return apps + videos


@pytest.fixture(scope="session")
def model_and_report(prof, suite):
    return identify(prof, suite[3], seed=123)


@pytest.fixture(scope="session")
def model(model_and_report):
    return model_and_report[0]


@pytest.fixture(scope="session")
def ctrl(model):
    return synthesize(model)
