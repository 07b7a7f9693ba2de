"""
Run configuration loaded from JSON, with every default resolved
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from registration.losses import LossWeights
from registration.optimizer import SolveConfig, SolveOptions
from registration.similarity import MetricParams
from utils.errors import ConfigError, IoFailureError


class IoOptions(BaseModel):
    """Optional outputs of the commands"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    export_pgm: bool = True
    save_fields: bool = True


class RunConfig(BaseModel):
    """Sections metric, loss, solve and io; unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    metric: MetricParams = Field(default_factory=MetricParams)
    loss: LossWeights = Field(default_factory=LossWeights)
    solve: SolveOptions = Field(default_factory=SolveOptions)
    io: IoOptions = Field(default_factory=IoOptions)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"Invalid run configuration: {e}") from e

    @classmethod
    def from_json(cls, path: Optional[Union[str, Path]]) -> "RunConfig":
        """
        Load a configuration file

        Args:
            path: JSON file, or None for all defaults

        Returns:
            RunConfig
        """
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise IoFailureError(f"Cannot read config {path}: {e}") from e
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        return cls.from_dict(document)

    def override(self, section: str, **values: Any) -> "RunConfig":
        """Copy with some keys of one section replaced; None values are ignored"""
        updates = {key: value for key, value in values.items() if value is not None}
        if not updates:
            return self
        merged = getattr(self, section).model_dump()
        merged.update(updates)
        document = self.model_dump()
        document[section] = merged
        return self.from_dict(document)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(**self.solve.model_dump(), metric=self.metric, loss_weights=self.loss)

    def resolved(self) -> Dict[str, Any]:
        """Fully resolved document, defaults included"""
        return self.model_dump(mode="json")
