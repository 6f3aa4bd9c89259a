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
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from dask import compute, config, delayed
from dask.diagnostics import ProgressBar
from tqdm import tqdm

from fragment_shuffle.accounting import (
    AmplificationQuery,
    CentralGuarantee,
    FragmentPlan,
    amplify,
    gaussian_sigma,
    match_fragment_budget,
    report_frag_central,
    report_frag_local,
    solve_local_for_central,
)
from fragment_shuffle.constants import (
    AUTO_EXPLICIT_LIMIT,
    RESULT_COLUMNS,
    RESULTS_SCHEMA_LINE,
)
from fragment_shuffle.data import (
    CountsDataset,
    GridDataset,
    PowerLawSpec,
    default_heavy_hitters,
    load_counts_csv,
    load_grid_from_pgm,
    sample_powerlaw,
    synthetic_image,
    write_grid_to_pgm,
)
from fragment_shuffle.errors import InfeasibleTargetError, PreconditionError
from fragment_shuffle.estimation import (
    HistogramEstimate,
    clamp_to_simplex,
    error_metrics,
    estimate_from_fragments,
    estimate_histogram,
    estimate_sampled,
)
from fragment_shuffle.params import ExperimentParams, MechanismParams
from fragment_shuffle.randomizers import (
    RandomStream,
    att_and_report_frag,
    att_frag_krappor,
    att_frag_sums,
    destination_for,
    encode_one_hot,
    expected_fragment_set_bits,
    expected_set_bits,
    randomize_bits,
    report_frag_sums,
)
from fragment_shuffle.shuffler import (
    build_instances,
    encode_payload,
    ingest,
    release_summed,
)


logger = logging.getLogger(__name__)


@dataclass
class ResultRow:  # pylint: disable=too-many-instance-attributes
    """One (target, mechanism) row of an experiment."""

    row: int
    dataset: str
    mechanism: str
    status: str = "ok"
    epsilon_c: float = math.nan
    delta: float = math.nan
    epsilon_linf: float = math.nan
    epsilon_l1: float = math.nan
    tau: int = 1
    epsilon_backstop: float = math.nan
    epsilon_fragment: float = math.nan
    epsilon_c_fragments: float = math.nan
    rmse: float = math.nan
    rmse_std: float = math.nan
    linf: float = math.nan
    linf_std: float = math.nan
    topk_recall: float = math.nan
    topk_recall_std: float = math.nan
    messages_per_respondent: float = math.nan
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.epsilon_l1 > self.epsilon_linf:
            raise ValueError("Single-report budget exceeds the all-reports budget.")

    def as_record(self) -> list[str]:
        """Values of :data:`RESULT_COLUMNS`, formatted for results.csv."""
        values = []
        for name in RESULT_COLUMNS:
            value = getattr(self, name)
            values.append(f"{value:.10g}" if isinstance(value, float) else str(value))
        return values


def load_dataset(params: ExperimentParams) -> CountsDataset:
    """Respondent counts of the configured dataset source."""
    source = params.dataset
    stream = RandomStream(params.seed, (0,))
    if source.pgm is not None:
        return load_grid_from_pgm(source.pgm.path, source.pgm.scale)
    if source.csv is not None:
        return load_counts_csv(source.csv)
    if source.powerlaw is not None:
        spec = source.powerlaw
        return sample_powerlaw(
            PowerLawSpec(
                spec.domain_size,
                spec.exponent,
                default_heavy_hitters(spec.domain_size, spec.heavy_hitters, spec.heavy_mass)
                if spec.heavy_hitters
                else (),
                spec.total_n,
            ),
            stream,
        )
    image = source.synthetic_image
    assert image is not None
    return synthetic_image(image.width, image.height, stream, image.blobs)


def _central(params: ExperimentParams, epsilon_local: float, n: int) -> float:
    """Amplified guarantee of a local budget, or the budget itself outside the window."""
    try:
        return amplify(
            AmplificationQuery(epsilon_local, n, params.delta), params.accounting
        ).epsilon
    except PreconditionError as error:
        logger.info("No amplification for epsilon_l=%g: %s", epsilon_local, error)
        return epsilon_local


def plan_row(
    params: ExperimentParams,
    mechanism: MechanismParams,
    epsilon: float,
    n: int,
    row: int = 0,
    dataset: str = "",
) -> ResultRow:
    """
    Privacy columns of a row, without simulation.

    Central targets are turned into local budgets through the amplification bound;
    local targets are amplified to report their central guarantee.
    """
    result = ResultRow(row, dataset, mechanism.label, delta=params.delta, tau=mechanism.tau)
    central = params.target.kind == "central"
    if not epsilon > 0:
        raise PreconditionError("epsilon > 0")

    if mechanism.kind == "gaussian":
        return replace(result, epsilon_c=epsilon, epsilon_linf=math.inf, epsilon_l1=math.inf)

    if mechanism.kind == "sampled_attr":
        return replace(result, epsilon_c=epsilon, epsilon_linf=epsilon, epsilon_l1=epsilon)

    if central:
        epsilon_local = solve_local_for_central(
            CentralGuarantee(epsilon, params.delta), n, params.accounting
        ).epsilon
        epsilon_c = epsilon
    else:
        epsilon_local = epsilon
        epsilon_c = _central(params, epsilon, n)
    if not epsilon_local > 0:
        raise PreconditionError("epsilon_local > 0")

    if mechanism.kind == "attr_frag":
        return replace(
            result,
            epsilon_c=epsilon_c,
            epsilon_linf=epsilon_local,
            epsilon_l1=epsilon_local,
            epsilon_backstop=epsilon_local,
        )

    epsilon_fragment = mechanism.epsilon_fragment or match_fragment_budget(
        epsilon_local, mechanism.tau, params.fragment_rule
    )
    plan = FragmentPlan(mechanism.tau, epsilon_local, epsilon_fragment, mechanism.tau)
    bound = math.nan
    try:
        bound = report_frag_central(plan, n, params.delta).epsilon
    except PreconditionError as error:
        logger.warning("Row %d: report fragmenting bound undefined, %s", row, error)
    if bound > epsilon_c:
        logger.warning(
            "Row %d: report fragmenting bound %.4g exceeds epsilon_c=%.4g.",
            row,
            bound,
            epsilon_c,
        )

    return replace(
        result,
        epsilon_c=epsilon_c,
        epsilon_linf=report_frag_local(plan).epsilon,
        epsilon_l1=report_frag_local(replace(plan, exposed=1)).epsilon,
        epsilon_backstop=epsilon_local,
        epsilon_fragment=epsilon_fragment,
        epsilon_c_fragments=bound,
    )


def report_privacy(
    params: ExperimentParams, dataset: CountsDataset | None = None
) -> list[ResultRow]:
    """
    Privacy columns of every row of an experiment; infeasible rows are marked.

    :param params: Experiment parameters.
    :param dataset: Respondent counts, loaded from ``params`` when omitted.
    """
    dataset = dataset if dataset is not None else load_dataset(params)
    rows = []
    for row, (epsilon, mechanism) in enumerate(_grid(params)):
        try:
            rows.append(
                plan_row(params, mechanism, epsilon, dataset.total_n, row, params.dataset.source)
            )
        except (InfeasibleTargetError, PreconditionError) as error:
            logger.warning("Row %d (%s) is infeasible: %s", row, mechanism.label, error)
            rows.append(
                ResultRow(
                    row,
                    params.dataset.source,
                    mechanism.label,
                    status="infeasible",
                    epsilon_c=epsilon,
                    delta=params.delta,
                    tau=mechanism.tau,
                )
            )
    return rows


def _grid(params: ExperimentParams) -> list[tuple[float, MechanismParams]]:
    return [
        (epsilon, mechanism)
        for mechanism in params.mechanism
        for epsilon in params.target.epsilon
    ]


def _respondent_values(dataset: CountsDataset) -> np.ndarray:
    return np.repeat(np.arange(dataset.k), dataset.counts)


def _check_instances(instances: int, n_destinations: int):
    if 0 < instances < n_destinations:
        logger.warning(
            "%d shuffler instances for %d destinations: several report streams "
            "share an instance.",
            instances,
            n_destinations,
        )


def simulate_attr_frag_sums(
    dataset: CountsDataset, epsilon: float, rng: RandomStream, instances: int = 0
) -> np.ndarray:
    """Per-attribute sums released by shuffler instances, one report at a time."""
    _check_instances(instances, dataset.k)
    shufflers = build_instances(dataset.k, instances)
    for respondent, value in enumerate(_respondent_values(dataset)):
        record = encode_one_hot(int(value), dataset.k)
        for report in att_frag_krappor(record, epsilon, rng, instances or None):
            uid, channel = report.destination
            ingest(shufflers[uid], channel, encode_payload([report.value]), respondent)

    sums = np.zeros(dataset.k, dtype=np.int64)
    for index in range(dataset.k):
        uid, channel = destination_for(index, instances or dataset.k)
        sums[index] = release_summed(shufflers[uid], channel)[0]
    return sums


def simulate_report_frag_sums(
    dataset: CountsDataset, plan: FragmentPlan, rng: RandomStream, instances: int = 0
) -> np.ndarray:
    """(tau, k) fragment sums released by shuffler instances, one report at a time."""
    k = dataset.k
    _check_instances(instances, k * plan.tau)
    shufflers = build_instances(k * plan.tau, instances)
    for respondent, value in enumerate(_respondent_values(dataset)):
        record = encode_one_hot(int(value), k)
        for report in att_and_report_frag(record, plan, rng, instances or None):
            uid, channel = report.inner.destination
            ingest(shufflers[uid], channel, encode_payload([report.inner.value]), respondent)

    sums = np.zeros((plan.tau, k), dtype=np.int64)
    for fragment in range(plan.tau):
        for attribute in range(k):
            uid, channel = destination_for(fragment * k + attribute, instances or k * plan.tau)
            sums[fragment, attribute] = release_summed(shufflers[uid], channel)[0]
    return sums


def _explicit(params: ExperimentParams, dataset: CountsDataset, tau: int) -> bool:
    if params.simulation == "auto":
        return dataset.total_n * dataset.k * tau <= AUTO_EXPLICIT_LIMIT
    return params.simulation == "explicit"


def estimate_row(
    params: ExperimentParams,
    dataset: CountsDataset,
    mechanism: MechanismParams,
    privacy: ResultRow,
    rng: RandomStream,
) -> HistogramEstimate:
    """One simulated trial of a row: randomize, shuffle and estimate."""
    n = dataset.total_n
    if mechanism.kind == "gaussian":
        sigma = 0.0
        if math.isfinite(privacy.epsilon_c):
            sigma = gaussian_sigma(privacy.epsilon_c, params.delta, 1.0)
        noisy = dataset.counts + rng.generator.normal(0.0, 1.0, dataset.k) * sigma
        return HistogramEstimate(noisy / n, n, privacy.epsilon_c)

    if mechanism.kind == "sampled_attr":
        values = _respondent_values(dataset)
        sampled = rng.generator.integers(dataset.k, size=n)
        bits = randomize_bits((sampled == values).astype(np.uint8), privacy.epsilon_l1, rng)
        sums = np.bincount(sampled, weights=bits, minlength=dataset.k)
        return estimate_sampled(
            sums, np.bincount(sampled, minlength=dataset.k), privacy.epsilon_l1
        )

    if mechanism.kind == "attr_frag":
        if _explicit(params, dataset, 1):
            sums = simulate_attr_frag_sums(
                dataset, privacy.epsilon_linf, rng, params.shuffler_instances
            )
        else:
            sums = att_frag_sums(dataset.counts, privacy.epsilon_linf, rng)
        return estimate_histogram(sums, n, privacy.epsilon_linf)

    plan = FragmentPlan(mechanism.tau, privacy.epsilon_backstop, privacy.epsilon_fragment)
    if _explicit(params, dataset, mechanism.tau):
        sums = simulate_report_frag_sums(dataset, plan, rng, params.shuffler_instances)
    else:
        sums = report_frag_sums(dataset.counts, plan, rng)
    return estimate_from_fragments(sums, n, plan)


def _units(dataset: CountsDataset, values: np.ndarray) -> np.ndarray:
    """Counts, or luminosities for image grids."""
    if isinstance(dataset, GridDataset):
        return values / dataset.scale
    return values


@delayed
def row_computation(
    params: ExperimentParams,
    dataset: CountsDataset,
    mechanism: MechanismParams,
    privacy: ResultRow,
) -> tuple[ResultRow, HistogramEstimate]:
    """Run every trial of a feasible row and aggregate its metrics."""
    start = time.perf_counter()
    truth = _units(dataset, dataset.counts.astype(float))
    topk = min(params.topk, dataset.k)
    metrics, first = [], None
    for trial in range(params.trials):
        estimate = estimate_row(
            params, dataset, mechanism, privacy, RandomStream(params.seed, (privacy.row + 1, trial))
        )
        if params.clamp:
            estimate = clamp_to_simplex(estimate)
        if first is None:
            first = estimate
        report = error_metrics(_units(dataset, estimate.h_hat * estimate.n), truth, topk)
        metrics.append((report.rmse, report.linf, report.topk_recall))

    table = np.asarray(metrics)
    spread = table.std(axis=0, ddof=1) if params.trials > 1 else np.zeros(3)
    messages = 1.0
    if mechanism.kind == "attr_frag":
        messages = expected_set_bits(dataset.k, privacy.epsilon_linf)
    elif mechanism.kind == "attr_and_report_frag":
        messages = expected_fragment_set_bits(
            dataset.k,
            FragmentPlan(mechanism.tau, privacy.epsilon_backstop, privacy.epsilon_fragment),
        )

    row = replace(
        privacy,
        rmse=float(table[:, 0].mean()),
        rmse_std=float(spread[0]),
        linf=float(table[:, 1].mean()),
        linf_std=float(spread[1]),
        topk_recall=float(table[:, 2].mean()),
        topk_recall_std=float(spread[2]),
        messages_per_respondent=float(messages),
        wall_time=time.perf_counter() - start,
    )
    return row, first


def write_results(rows: list[ResultRow], out_dir: Path) -> Path:
    """Write results.csv and timings.csv."""
    path = out_dir / "results.csv"
    with open(path, "w", encoding="utf-8", newline="") as file:
        file.write(RESULTS_SCHEMA_LINE + "\n")
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        writer.writerows(row.as_record() for row in rows)

    with open(out_dir / "timings.csv", "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["row", "wall_time"])
        writer.writerows([row.row, f"{row.wall_time:.6f}"] for row in rows)
    return path


def run_experiment(params: ExperimentParams) -> list[ResultRow]:
    """
    Simulate every (target, mechanism) row and write results.csv, timings.csv,
    run-manifest.json and recon_<row>.pgm for image datasets.
    """
    out_dir = Path(params.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(params)
    logger.info(
        "Experiment '%s': %s dataset, k=%d, n=%d, %d rows.",
        params.title,
        params.dataset.source,
        dataset.k,
        dataset.total_n,
        len(params.target.epsilon) * len(params.mechanism),
    )

    planned = report_privacy(params, dataset)
    logger.info("Submitting parallel jobs:")
    tasks, rows = [], []
    for privacy, (_, mechanism) in zip(planned, _grid(params)):
        if privacy.status != "ok":
            continue
        logger.info(
            "Row %d: %s, epsilon_c=%.4g, epsilon_linf=%.4g",
            privacy.row,
            privacy.mechanism,
            privacy.epsilon_c,
            privacy.epsilon_linf,
        )
        tasks.append(row_computation(params, dataset, mechanism, privacy))

    logger.info("Processing and collecting results:")
    with config.set(scheduler="threads", num_workers=params.threads):
        with ProgressBar():
            results = compute(*tasks)

    simulated = {row.row: (row, estimate) for row, estimate in results}
    for privacy in tqdm(planned, desc="Exporting", disable=None):
        row, estimate = simulated.get(privacy.row, (privacy, None))
        rows.append(row)
        if isinstance(dataset, GridDataset) and estimate is not None:
            write_grid_to_pgm(
                estimate,
                out_dir / f"recon_{row.row}.pgm",
                scale=dataset.scale,
                shape=(dataset.width, dataset.height),
            )

    path = write_results(rows, out_dir)
    with open(out_dir / "run-manifest.json", "w", encoding="utf-8") as file:
        json.dump(params.model_dump(mode="json"), file, indent=2, sort_keys=True)
    logger.info("Results written to %s", path)

    return rows


class ExperimentDriver:
    """
    Runs an experiment configuration.

    :param params: Validated experiment parameters.
    """

    def __init__(self, params: ExperimentParams):
        self.params = params

    @classmethod
    def start(cls, filepath: str | Path, **overrides) -> ExperimentDriver:
        """Load a TOML configuration, apply overrides and run it."""
        logger.info("Loading configuration %s", filepath)
        driver = cls(ExperimentParams.from_toml(filepath, **overrides))
        driver.run()
        return driver

    def run(self) -> list[ResultRow]:
        return run_experiment(self.params)

    @property
    def params(self) -> ExperimentParams:
        """Experiment parameters."""
        return self._params

    @params.setter
    def params(self, val: ExperimentParams):
        if not isinstance(val, ExperimentParams):
            raise TypeError("Parameters must be of type ExperimentParams.")
        self._params = val


if __name__ == "__main__":
    FILE = sys.argv[1]
    ExperimentDriver.start(FILE)
