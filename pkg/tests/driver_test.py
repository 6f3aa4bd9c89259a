# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from fragment_shuffle import driver
from fragment_shuffle.accounting import (
    AmplificationQuery,
    FragmentPlan,
    amplify,
    report_frag_central,
    report_frag_local,
)
from fragment_shuffle.constants import RESULT_COLUMNS, RESULTS_SCHEMA_LINE
from fragment_shuffle.data import CountsDataset, read_pgm, write_counts_csv
from fragment_shuffle.driver import (
    ExperimentDriver,
    ResultRow,
    load_dataset,
    plan_row,
    report_privacy,
    run_experiment,
    simulate_attr_frag_sums,
    simulate_report_frag_sums,
)
from fragment_shuffle.errors import PreconditionError
from fragment_shuffle.params import ExperimentParams, MechanismParams
from fragment_shuffle.randomizers import RandomStream


def image_params(out_dir: Path, **changes) -> ExperimentParams:
    config = {
        "seed": 7,
        "simulation": "aggregate",
        "out_dir": str(out_dir),
        "dataset": {"synthetic_image": {"width": 32, "height": 32}},
        "target": {"kind": "central", "epsilon": [0.1, 1.0], "delta": 5e-8},
        "mechanism": [{"kind": "attr_frag"}],
    }
    config.update(changes)
    return ExperimentParams.model_validate(config)


def read_results(path: Path) -> list[dict]:
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == RESULTS_SCHEMA_LINE
    return list(csv.DictReader(lines[1:]))


def test_result_row_budget_order():
    with pytest.raises(ValueError):
        ResultRow(0, "csv", "attr_frag", epsilon_linf=1.0, epsilon_l1=2.0)

    record = ResultRow(0, "csv", "gaussian", epsilon_linf=math.inf, epsilon_l1=math.inf)
    assert len(record.as_record()) == len(RESULT_COLUMNS)
    assert record.as_record()[RESULT_COLUMNS.index("epsilon_linf")] == "inf"


def test_run_experiment_outputs(tmp_path: Path):
    params = image_params(tmp_path / "run")

    rows = run_experiment(params)

    assert [row.row for row in rows] == [0, 1]
    records = read_results(tmp_path / "run" / "results.csv")
    assert list(records[0]) == RESULT_COLUMNS
    assert [record["status"] for record in records] == ["ok", "ok"]
    assert (tmp_path / "run" / "timings.csv").is_file()
    assert (tmp_path / "run" / "recon_0.pgm").is_file()

    width, height, _ = read_pgm(tmp_path / "run" / "recon_1.pgm")
    assert (width, height) == (32, 32)

    manifest = json.loads((tmp_path / "run" / "run-manifest.json").read_text("utf-8"))
    assert manifest["seed"] == 7


def test_run_experiment_reproducible(tmp_path: Path):
    run_experiment(image_params(tmp_path / "first"))
    run_experiment(image_params(tmp_path / "second", threads=2))

    assert (tmp_path / "first" / "results.csv").read_text("utf-8") == (
        tmp_path / "second" / "results.csv"
    ).read_text("utf-8")
    for row in (0, 1):
        name = f"recon_{row}.pgm"
        assert (tmp_path / "first" / name).read_bytes() == (
            tmp_path / "second" / name
        ).read_bytes()


def test_error_decreases_with_budget(tmp_path: Path):
    rows = run_experiment(image_params(tmp_path, trials=3))

    assert rows[0].epsilon_c == 0.1
    assert rows[1].epsilon_c == 1.0
    assert rows[1].rmse < rows[0].rmse
    assert rows[1].epsilon_linf > rows[0].epsilon_linf
    assert rows[0].rmse_std >= 0.0


def test_report_privacy_grid_order(tmp_path: Path):
    params = image_params(
        tmp_path,
        mechanism=[{"kind": "attr_frag"}, {"kind": "attr_and_report_frag", "tau": 4}],
    )

    rows = report_privacy(params)

    assert [row.mechanism for row in rows] == [
        "attr_frag",
        "attr_frag",
        "attr_and_report_frag(tau=4)",
        "attr_and_report_frag(tau=4)",
    ]
    assert [row.epsilon_c for row in rows] == [0.1, 1.0, 0.1, 1.0]
    for row in rows:
        assert row.status == "ok"
        assert row.epsilon_l1 <= row.epsilon_linf
    for row in rows[:2]:
        assert row.epsilon_backstop == row.epsilon_linf


def test_amplified_local_budget_matches_target(tmp_path: Path):
    params = image_params(tmp_path)
    rows = report_privacy(params)
    n = load_dataset(params).total_n
    for row in rows:
        central = amplify(AmplificationQuery(row.epsilon_linf, n, row.delta), "binary_exact")
        assert central.epsilon == pytest.approx(row.epsilon_c, rel=1e-6)


def test_local_target_report_fragmenting_row(tmp_path: Path):
    params = image_params(
        tmp_path,
        preset="horse",
        target={"kind": "local", "epsilon": [8.55]},
        mechanism=[{"kind": "attr_and_report_frag", "tau": 4, "epsilon_fragment": 7.165}],
    )

    (row,) = report_privacy(params)

    assert row.delta == 5e-8
    assert row.mechanism == "attr_and_report_frag(tau=4)"
    assert row.epsilon_backstop == 8.55
    assert row.epsilon_fragment == 7.165
    assert row.epsilon_l1 == pytest.approx(6.94, abs=0.01)
    assert row.epsilon_linf == pytest.approx(8.55, abs=0.01)
    assert row.epsilon_linf == report_frag_local(FragmentPlan(4, 8.55, 7.165, 4)).epsilon
    n = load_dataset(params).total_n
    assert row.epsilon_c_fragments == report_frag_central(
        FragmentPlan(4, 8.55, 7.165, 4), n, 5e-8
    ).epsilon


def test_matched_fragment_budget(tmp_path: Path):
    params = image_params(
        tmp_path,
        target={"kind": "local", "epsilon": [8.55], "delta": 5e-8},
        mechanism=[{"kind": "attr_and_report_frag", "tau": 16}],
    )

    (row,) = report_privacy(params)

    assert row.epsilon_fragment == pytest.approx(5.775, abs=0.01)


def test_undefined_fragmenting_bound_is_reported(tmp_path: Path, caplog):
    params = image_params(
        tmp_path,
        target={"kind": "local", "epsilon": [4.0], "delta": 5e-8},
        mechanism=[
            {"kind": "attr_frag"},
            {"kind": "attr_and_report_frag", "tau": 4, "epsilon_fragment": 0.9},
        ],
    )

    with caplog.at_level(logging.WARNING):
        attr_row, fragment_row = report_privacy(params)

    assert math.isnan(attr_row.epsilon_c_fragments)
    assert fragment_row.status == "ok"
    assert math.isnan(fragment_row.epsilon_c_fragments)
    assert "epsilon_fragment > 1" in caplog.text


def test_rmse_improves_across_central_targets(tmp_path: Path):
    params = image_params(
        tmp_path,
        dataset={"synthetic_image": {"width": 64, "height": 64}},
        target={"kind": "central", "epsilon": [0.05, 0.25, 0.5, 1.0], "delta": 5e-8},
    )

    rows = run_experiment(params)

    assert [row.status for row in rows] == ["ok"] * 4
    errors = [row.rmse for row in rows]
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))


def test_run_experiment_loads_dataset_once(tmp_path: Path, monkeypatch):
    calls = []

    def counting_load(params):
        calls.append(params)
        return load_dataset(params)

    monkeypatch.setattr(driver, "load_dataset", counting_load)

    run_experiment(image_params(tmp_path))

    assert len(calls) == 1


def test_shared_shuffler_instances_warn(caplog):
    dataset = CountsDataset(np.array([4, 0, 3, 1]))

    with caplog.at_level(logging.WARNING):
        simulate_attr_frag_sums(dataset, 2.0, RandomStream(1), instances=4)
    assert "share an instance" not in caplog.text

    with caplog.at_level(logging.WARNING):
        simulate_attr_frag_sums(dataset, 2.0, RandomStream(1), instances=3)
        simulate_report_frag_sums(dataset, FragmentPlan(2, 3.0, 2.0), RandomStream(1), 5)
    assert caplog.text.count("share an instance") == 2


def test_infeasible_rows_are_marked(tmp_path: Path, caplog):
    params = image_params(tmp_path, target={"epsilon": [100.0, 0.0], "delta": 5e-8})

    with caplog.at_level(logging.WARNING):
        rows = run_experiment(params)

    assert [row.status for row in rows] == ["infeasible", "infeasible"]
    assert "infeasible" in caplog.text
    records = read_results(tmp_path / "results.csv")
    assert records[0]["rmse"] == "nan"
    assert not (tmp_path / "recon_0.pgm").exists()


def test_plan_row_rejects_zero_budget(tmp_path: Path):
    params = image_params(tmp_path)

    with pytest.raises(PreconditionError):
        plan_row(params, MechanismParams(kind="attr_frag"), 0.0, 10_000)


def test_gaussian_without_noise(tmp_path: Path):
    params = image_params(
        tmp_path,
        target={"epsilon": [math.inf], "delta": 5e-8},
        mechanism=[{"kind": "gaussian"}],
    )

    (row,) = run_experiment(params)

    assert row.epsilon_linf == math.inf
    assert row.rmse == pytest.approx(0.0, abs=1e-9)
    assert row.topk_recall == 1.0


def test_sampled_attribute_row(tmp_path: Path):
    params = image_params(
        tmp_path,
        target={"kind": "local", "epsilon": [2.0], "delta": 5e-8},
        mechanism=[{"kind": "sampled_attr"}],
    )

    (row,) = run_experiment(params)

    assert row.epsilon_c == 2.0
    assert row.epsilon_l1 == row.epsilon_linf == 2.0
    assert row.messages_per_respondent == 1.0
    assert math.isfinite(row.rmse)


def test_explicit_simulation_on_counts(tmp_path: Path):
    counts = tmp_path / "counts.csv"
    write_counts_csv(CountsDataset(np.array([40, 25, 10, 5])), counts)
    params = image_params(
        tmp_path,
        simulation="explicit",
        shuffler_instances=3,
        dataset={"csv": str(counts)},
        target={"kind": "local", "epsilon": [2.0], "delta": 1e-6},
        mechanism=[{"kind": "attr_frag"}, {"kind": "attr_and_report_frag", "tau": 2}],
        topk=2,
    )

    rows = run_experiment(params)

    assert [row.status for row in rows] == ["ok", "ok"]
    assert all(math.isfinite(row.rmse) for row in rows)
    assert not list(tmp_path.glob("recon_*.pgm"))


@pytest.mark.parametrize("instances", [0, 3])
def test_explicit_simulators_without_noise(instances):
    dataset = CountsDataset(np.array([4, 0, 3, 1]))
    stream = RandomStream(1)

    sums = simulate_attr_frag_sums(dataset, math.inf, stream, instances)
    np.testing.assert_array_equal(sums, dataset.counts)

    plan = FragmentPlan(3, math.inf, math.inf)
    fragments = simulate_report_frag_sums(dataset, plan, stream, instances)
    np.testing.assert_array_equal(fragments, np.tile(dataset.counts, (3, 1)))


def test_driver_start(tmp_path: Path):
    config = tmp_path / "config.toml"
    config.write_text(
        "\n".join(
            [
                "[dataset]",
                "synthetic_image = { width = 8, height = 8 }",
                "[target]",
                'kind = "local"',
                "epsilon = [3.0]",
                "delta = 1e-6",
                "[[mechanism]]",
                'kind = "attr_frag"',
            ]
        ),
        encoding="utf-8",
    )

    driver = ExperimentDriver.start(config, out_dir=tmp_path / "out", seed=2)

    assert driver.params.seed == 2
    assert (tmp_path / "out" / "results.csv").is_file()
    with pytest.raises(TypeError):
        driver.params = {"seed": 1}  # type: ignore[assignment]
