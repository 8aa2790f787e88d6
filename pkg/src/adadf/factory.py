"""Create adadf components."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import structlog

from adadf.config import RunConfig
from adadf.constants import LOGGER_NAME
from adadf.services.experiment import ExperimentService
from adadf.services.report import ReportService
from adadf.storage.artifacts import ArtifactStore

if TYPE_CHECKING:
    from typing import Any, Mapping, Optional, Union

    from structlog.stdlib import BoundLogger

__all__ = ["ComponentFactory"]


class ComponentFactory:
    """Build adadf components.

    Given the run configuration, construct the services of the command-line
    interface on demand.

    Parameters
    ----------
    config : `adadf.config.RunConfig`, optional
        The run configuration.  Only the report service works without one.
    logger : `structlog.stdlib.BoundLogger`, optional
        Logger to use.  Defaults to the adadf logger.
    """

    @classmethod
    def from_file(
        cls, path: str, overrides: Optional[Mapping[str, Any]] = None
    ) -> ComponentFactory:
        """Build a factory from a settings file and overrides.

        Loading the settings configures logging.
        """
        return cls(config=RunConfig.from_file(path, overrides))

    def __init__(
        self,
        *,
        config: Optional[RunConfig] = None,
        logger: Optional[BoundLogger] = None,
    ) -> None:
        self._config = config
        if logger is None:
            logger = structlog.get_logger(LOGGER_NAME)
        self._logger = logger

    @property
    def config(self) -> RunConfig:
        assert self._config, "factory built without a configuration"
        return self._config

    def create_artifact_store(
        self, directory: Union[str, Path]
    ) -> ArtifactStore:
        """Create a store for one run directory."""
        return ArtifactStore(Path(directory))

    def create_experiment_service(self) -> ExperimentService:
        """Create the service that trains models and runs grids.

        Returns
        -------
        experiment_service : `adadf.services.experiment.ExperimentService`
            The new experiment service.
        """
        logger = self._logger.bind(seed=self.config.seed)
        return ExperimentService(self.config, logger)

    def create_report_service(
        self, directory: Union[str, Path]
    ) -> ReportService:
        """Create the service that reports on a completed run."""
        store = self.create_artifact_store(directory)
        return ReportService(store, self._logger)
