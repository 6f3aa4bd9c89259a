# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

import math
from copy import deepcopy
from pathlib import Path
from typing import Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fragment_shuffle.accounting import AmplificationMode
from fragment_shuffle.constants import IMAGE_SCALE, POWERLAW_EXPONENT, defaults, preset_deltas


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticImageParams(_Params):
    """Generated test image."""

    width: int = Field(64, gt=0)
    height: int = Field(64, gt=0)
    blobs: int = Field(6, gt=0)


class PgmParams(_Params):
    """Image file read as respondent counts."""

    path: Path
    scale: float = Field(IMAGE_SCALE, gt=0)


class PowerLawParams(_Params):
    """Heavy hitters on top of a power-law tail."""

    domain_size: int = Field(gt=0)
    total_n: int = Field(gt=0)
    exponent: float = Field(POWERLAW_EXPONENT, gt=0)
    heavy_hitters: int = Field(100, ge=0)
    heavy_mass: float = Field(0.3, ge=0, le=1)


class DatasetParams(_Params):
    """Exactly one respondent data source."""

    pgm: Optional[PgmParams] = None
    powerlaw: Optional[PowerLawParams] = None
    csv: Optional[Path] = None
    synthetic_image: Optional[SyntheticImageParams] = None

    @model_validator(mode="after")
    def single_source(self) -> DatasetParams:
        sources = [
            name
            for name in ("pgm", "powerlaw", "csv", "synthetic_image")
            if getattr(self, name) is not None
        ]
        if len(sources) != 1:
            raise ValueError(
                f"Exactly one dataset source is required, got {sources or 'none'}."
            )
        return self

    @property
    def source(self) -> str:
        return next(
            name
            for name in ("pgm", "powerlaw", "csv", "synthetic_image")
            if getattr(self, name) is not None
        )


class TargetParams(_Params):
    """Privacy targets swept by the experiment, one row per epsilon."""

    kind: Literal["central", "local"] = "central"
    epsilon: list[float] = Field(min_length=1)
    delta: Optional[float] = Field(None, gt=0, lt=1)

    @field_validator("epsilon")
    @classmethod
    def nonnegative(cls, values: list[float]) -> list[float]:
        if any(math.isnan(value) or value < 0 for value in values):
            raise ValueError("Target epsilons must be nonnegative.")
        return values


class MechanismParams(_Params):
    """Mechanism compared in the experiment."""

    kind: Literal["gaussian", "attr_frag", "attr_and_report_frag", "sampled_attr"]
    tau: int = Field(1, ge=1)
    epsilon_fragment: Optional[float] = Field(None, gt=0)

    @property
    def label(self) -> str:
        if self.kind == "attr_and_report_frag":
            return f"{self.kind}(tau={self.tau})"
        return self.kind


class ExperimentParams(_Params):  # pylint: disable=too-many-instance-attributes
    """
    Experiment configuration, read from a TOML file.
    """

    title: str = defaults["title"]
    version: str = defaults["version"]
    preset: Optional[Literal["horse", "child", "map", "heavy_hitter"]] = None
    seed: int = Field(defaults["seed"], ge=0, lt=2**64)
    trials: int = Field(defaults["trials"], ge=1)
    topk: int = Field(defaults["topk"], ge=1)
    accounting: AmplificationMode = AmplificationMode(defaults["accounting"])
    simulation: Literal["auto", "explicit", "aggregate"] = defaults["simulation"]
    shuffler_instances: int = Field(defaults["shuffler_instances"], ge=0)
    out_dir: Path = Path(defaults["out_dir"])
    clamp: bool = defaults["clamp"]
    fragment_rule: Literal["variance", "accuracy_terms"] = defaults["fragment_rule"]
    threads: int = Field(defaults["threads"], ge=1)
    dataset: DatasetParams
    target: TargetParams
    mechanism: list[MechanismParams] = Field(min_length=1)

    @model_validator(mode="before")
    @classmethod
    def preset_delta(cls, data):
        if not isinstance(data, dict):
            return data
        target = data.get("target")
        preset = data.get("preset")
        if isinstance(target, dict) and target.get("delta") is None and preset in preset_deltas:
            data = {**data, "target": {**target, "delta": preset_deltas[preset]}}
        return data

    @model_validator(mode="after")
    def delta_is_set(self) -> ExperimentParams:
        if self.target.delta is None:
            raise ValueError("Set 'target.delta' or choose a dataset 'preset'.")
        return self

    @property
    def delta(self) -> float:
        return float(self.target.delta)  # type: ignore[arg-type]

    @classmethod
    def from_toml(cls, filepath: str | Path, **overrides) -> ExperimentParams:
        """
        Load a configuration file; non-None keyword overrides replace file values.

        Relative data paths are resolved against the configuration file folder.
        """
        filepath = Path(filepath)
        with open(filepath, "rb") as file:
            content = tomli.load(file)

        content = deepcopy(content)
        dataset = content.get("dataset", {})
        for key in ("pgm", "csv"):
            if key not in dataset:
                continue
            entry = dataset[key]
            raw = entry["path"] if isinstance(entry, dict) else entry
            resolved = Path(raw)
            if not resolved.is_absolute():
                resolved = filepath.parent / resolved
            if isinstance(entry, dict):
                entry["path"] = str(resolved)
            else:
                dataset[key] = str(resolved)

        content.update({key: value for key, value in overrides.items() if value is not None})
        return cls.model_validate(content)
