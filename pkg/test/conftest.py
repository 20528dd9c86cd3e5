import inspect
import logging
import os
import sys

import numpy as np
import pytest

# Include parent folder in module search
currentdir = os.path.dirname(os.path.abspath(inspect.getfile(inspect.currentframe())))  # type: ignore
parentdir = os.path.dirname(currentdir)
sys.path.insert(0, parentdir)

from helpers.ScenarioHelper import builtin_scenarios  # noqa: E402


@pytest.fixture
def log() -> logging.Logger:
    logger = logging.getLogger("StableFlowTest")
    logger.addHandler(logging.NullHandler())
    logger.propagate = False
    return logger


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def scenarios():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def waist_chart(scenarios):
    logger = logging.getLogger("StableFlowTest")
    return scenarios["hyperbolic-waist"].chart(logger)
