"""Test fixtures."""

from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from adadf.data import load_dataset
from tests.support.settings import build_config

if TYPE_CHECKING:
    from typing import List

    from _pytest.config import Config
    from _pytest.config.argparsing import Parser
    from _pytest.nodes import Item

    from adadf.config import RunConfig
    from adadf.data import Dataset


def pytest_addoption(parser: Parser) -> None:
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run the long directional experiments.",
    )


def pytest_collection_modifyitems(config: Config, items: List[Item]) -> None:
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def config() -> RunConfig:
    """Configuration of a tiny run."""
    return build_config()


@pytest.fixture
def dataset(config: RunConfig) -> Dataset:
    """The synthetic dataset of the tiny run."""
    return load_dataset(config.data)
