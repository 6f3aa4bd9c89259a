# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

from pathlib import Path

import pytest
from pydantic import ValidationError

from fragment_shuffle import assets_path
from fragment_shuffle.accounting import AmplificationMode
from fragment_shuffle.params import ExperimentParams, MechanismParams


def base_config(**changes) -> dict:
    config = {
        "dataset": {"synthetic_image": {"width": 8, "height": 8}},
        "target": {"kind": "central", "epsilon": [0.5], "delta": 1e-6},
        "mechanism": [{"kind": "attr_frag"}],
    }
    config.update(changes)
    return config


def test_defaults():
    params = ExperimentParams.model_validate(base_config())

    assert params.seed == 0
    assert params.trials == 1
    assert params.accounting is AmplificationMode.BINARY_EXACT
    assert params.simulation == "auto"
    assert params.out_dir == Path("results")
    assert params.delta == 1e-6
    assert params.dataset.source == "synthetic_image"


@pytest.mark.parametrize(
    "preset, delta", [("horse", 5e-8), ("child", 5e-9), ("map", 5e-10), ("heavy_hitter", 1e-9)]
)
def test_preset_fills_delta(preset, delta):
    config = base_config(preset=preset)
    config["target"] = {"epsilon": [1.0]}

    assert ExperimentParams.model_validate(config).delta == delta


def test_explicit_delta_wins_over_preset():
    params = ExperimentParams.model_validate(base_config(preset="horse"))

    assert params.delta == 1e-6


def test_missing_delta():
    config = base_config()
    config["target"] = {"epsilon": [1.0]}

    with pytest.raises(ValidationError, match="target.delta"):
        ExperimentParams.model_validate(config)


@pytest.mark.parametrize(
    "dataset",
    [
        {},
        {
            "synthetic_image": {"width": 8, "height": 8},
            "csv": "counts.csv",
        },
    ],
)
def test_single_dataset_source(dataset):
    with pytest.raises(ValidationError, match="Exactly one dataset source"):
        ExperimentParams.model_validate(base_config(dataset=dataset))


@pytest.mark.parametrize(
    "changes",
    [
        {"unknown": 1},
        {"trials": 0},
        {"seed": -1},
        {"accounting": "tight"},
        {"mechanism": []},
        {"target": {"epsilon": [-0.1], "delta": 1e-6}},
        {"target": {"epsilon": [], "delta": 1e-6}},
        {"target": {"epsilon": [1.0], "delta": 1.0}},
        {"mechanism": [{"kind": "attr_and_report_frag", "tau": 0}]},
    ],
)
def test_invalid_values(changes):
    with pytest.raises(ValidationError):
        ExperimentParams.model_validate(base_config(**changes))


def test_frozen():
    params = ExperimentParams.model_validate(base_config())

    with pytest.raises(ValidationError):
        params.seed = 3  # type: ignore[misc]


def test_mechanism_label():
    assert MechanismParams(kind="attr_frag").label == "attr_frag"
    assert (
        MechanismParams(kind="attr_and_report_frag", tau=4).label
        == "attr_and_report_frag(tau=4)"
    )


@pytest.mark.parametrize("name", ["horse", "child", "map", "heavy_hitter"])
def test_presets_load(name):
    params = ExperimentParams.from_toml(assets_path() / "presets" / f"{name}.toml")

    assert params.preset == name
    assert params.mechanism


def test_from_toml_overrides(tmp_path: Path):
    params = ExperimentParams.from_toml(
        assets_path() / "example.toml", seed=3, out_dir=tmp_path, threads=None
    )

    assert params.seed == 3
    assert params.out_dir == tmp_path
    assert params.threads == 1
    assert params.delta == 5e-8
    assert [mechanism.label for mechanism in params.mechanism] == [
        "gaussian",
        "attr_frag",
        "attr_and_report_frag(tau=4)",
    ]


def test_from_toml_resolves_relative_paths(tmp_path: Path):
    folder = tmp_path / "configs"
    folder.mkdir()
    config = folder / "run.toml"
    config.write_text(
        "\n".join(
            [
                "[dataset]",
                'pgm = { path = "images/tiny.pgm", scale = 2.5 }',
                "[target]",
                "epsilon = [1.0]",
                "delta = 1e-6",
                "[[mechanism]]",
                'kind = "attr_frag"',
            ]
        ),
        encoding="utf-8",
    )

    params = ExperimentParams.from_toml(config)

    assert params.dataset.pgm is not None
    assert params.dataset.pgm.path == folder / "images" / "tiny.pgm"
    assert params.dataset.pgm.scale == 2.5
