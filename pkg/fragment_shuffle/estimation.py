# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fragment_shuffle.accounting import FragmentPlan
from fragment_shuffle.errors import ReportFormatError
from fragment_shuffle.randomizers import debias_factors


@dataclass(frozen=True, eq=False)
class HistogramEstimate:
    """
    Debiased frequency estimate.

    Entries are unbiased estimates of the fraction of respondents holding each value and
    may fall outside [0, 1].
    """

    h_hat: np.ndarray
    n: int
    epsilon_used: float

    def __post_init__(self):
        values = np.asarray(self.h_hat, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ReportFormatError("Estimates must be a nonempty vector.")
        if not np.all(np.isfinite(values)):
            raise ValueError("Estimates must be finite.")
        object.__setattr__(self, "h_hat", values)

    @property
    def k(self) -> int:
        return self.h_hat.size


@dataclass(frozen=True)
class ErrorReport:
    """Accuracy of an estimate: l-infinity error, RMSE and top-K recall."""

    linf: float
    rmse: float
    topk_recall: float
    beta: float = 0.05

    def __post_init__(self):
        if self.linf < 0 or self.rmse < 0:
            raise ValueError("Errors must be nonnegative.")
        if not 0.0 <= self.topk_recall <= 1.0:
            raise ValueError("Attribute 'topk_recall' must be a fraction.")


def estimate_histogram(sums: np.ndarray, n: int, epsilon: float) -> HistogramEstimate:
    """
    Frequency estimate from per-attribute sums of randomized bits.

    ĥ_j = ((e^ε+1)/(e^ε−1))·S_j/n − 1/(e^ε−1)

    :param sums: Released sum of each attribute.
    :param n: Number of respondents.
    :param epsilon: Budget of each randomized bit.
    """
    if n < 1:
        raise ValueError("Attribute 'n' must be a positive count.")
    sums = np.asarray(sums, dtype=float)
    if np.any(sums < 0) or np.any(sums > n):
        raise ValueError("Sums must lie in [0, n].")

    scale, offset = debias_factors(epsilon)
    return HistogramEstimate(scale * sums / n - offset, n, epsilon)


def estimate_from_fragments(
    fragment_sums: np.ndarray, n: int, plan: FragmentPlan
) -> HistogramEstimate:
    """
    Frequency estimate from the (tau, k) matrix of fragment sums.

    Each fragment row is debiased at epsilon_fragment, the rows are averaged with equal
    weights, and the average is debiased at epsilon_backstop.
    """
    fragment_sums = np.asarray(fragment_sums, dtype=float)
    if fragment_sums.ndim != 2 or fragment_sums.shape[0] != plan.tau:
        raise ReportFormatError(
            f"Expected a ({plan.tau}, k) matrix of fragment sums, "
            f"got shape {fragment_sums.shape}."
        )
    if n < 1:
        raise ValueError("Attribute 'n' must be a positive count.")

    scale, offset = debias_factors(plan.epsilon_fragment)
    backstop = np.mean(scale * fragment_sums / n - offset, axis=0)
    scale, offset = debias_factors(plan.epsilon_backstop)

    return HistogramEstimate(scale * backstop - offset, n, plan.epsilon_backstop)


def estimate_sampled(
    sums: np.ndarray, sampled_counts: np.ndarray, epsilon: float
) -> HistogramEstimate:
    """
    Frequency estimate when each respondent reports one sampled attribute.

    :param sums: Sum of the reported bits per attribute.
    :param sampled_counts: Number of respondents who sampled each attribute.
    :param epsilon: Budget of the single report.
    """
    sums = np.asarray(sums, dtype=float)
    sampled_counts = np.asarray(sampled_counts, dtype=float)
    if sums.shape != sampled_counts.shape:
        raise ReportFormatError("Sums and sample counts differ in length.")

    scale, offset = debias_factors(epsilon)
    sampled = sampled_counts > 0
    h_hat = np.zeros_like(sums)
    h_hat[sampled] = scale * sums[sampled] / sampled_counts[sampled] - offset

    return HistogramEstimate(h_hat, int(sampled_counts.sum()), epsilon)


def clamp_to_simplex(estimate: HistogramEstimate) -> HistogramEstimate:
    """Zero out negative entries and renormalise to a distribution."""
    clipped = np.clip(estimate.h_hat, 0.0, None)
    total = clipped.sum()
    if total == 0:
        clipped = np.full(estimate.k, 1.0 / estimate.k)
    else:
        clipped = clipped / total
    return HistogramEstimate(clipped, estimate.n, estimate.epsilon_used)


def _top(values: np.ndarray, topk: int) -> set[int]:
    return set(np.argsort(-values, kind="stable")[:topk].tolist())


def error_metrics(
    estimate: HistogramEstimate | np.ndarray, truth: np.ndarray, topk: int
) -> ErrorReport:
    """
    Compare an estimate with the true frequencies.

    Both vectors are compared in the units they are given in.

    :param estimate: Estimate, or a vector in the same units as ``truth``.
    :param truth: True values.
    :param topk: Size K of the top-K sets compared.
    """
    values = estimate.h_hat if isinstance(estimate, HistogramEstimate) else estimate
    values = np.asarray(values, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if values.shape != truth.shape:
        raise ReportFormatError(
            f"Estimate of length {values.size} compared with truth of length {truth.size}."
        )
    if not 1 <= topk <= truth.size:
        raise ValueError("Attribute 'topk' must be in [1, k].")

    deviation = values - truth
    recall = len(_top(values, topk) & _top(truth, topk)) / topk

    return ErrorReport(
        linf=float(np.max(np.abs(deviation))),
        rmse=float(np.sqrt(np.mean(deviation**2))),
        topk_recall=recall,
    )
