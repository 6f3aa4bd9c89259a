# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
Privacy accountant for anonymous, fragmented local reports.

Every function is pure. Epsilons are in nats; deltas are probabilities. Bounds with a
validity window raise :class:`~fragment_shuffle.errors.PreconditionError` naming the
violated inequality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, log_ndtr, ndtr

from fragment_shuffle.errors import (
    InfeasibleTargetError,
    PreconditionError,
    UnboundedError,
)


logger = logging.getLogger(__name__)

#: Constant of the generic amplification bound C·(e^ε−1)·sqrt(log(1/δ)/n).
GENERIC_AMPLIFICATION_CONSTANT = 8.0

#: Grid step of :func:`gaussian_sigma`, in units of the sensitivity.
SIGMA_GRID_STEP = 1e-6

#: Inward margin of the exact window edge, keeping the blanket above its floor after
#: rounding.
WINDOW_EDGE_MARGIN = 1e-12


class PrivacyModel(str, Enum):
    """Neighbouring relation a local budget is stated under."""

    REMOVAL = "removal"
    REPLACEMENT = "replacement"


class AmplificationMode(str, Enum):
    """Amplification-by-shuffling bound used to turn local into central budgets."""

    BINARY_EXACT = "binary_exact"
    BINARY_SIMPLE = "binary_simple"
    GENERIC = "generic"


def _check_probability(name: str, value: float):
    if not 0.0 <= value < 1.0:
        raise ValueError(f"Attribute '{name}' must be a probability in [0, 1).")


@dataclass(frozen=True)
class LocalBudget:
    """Local privacy budget of a randomizer."""

    epsilon: float
    delta: float = 0.0
    model: PrivacyModel = PrivacyModel.REMOVAL

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("Attribute 'epsilon' must be nonnegative.")
        _check_probability("delta", self.delta)
        object.__setattr__(self, "model", PrivacyModel(self.model))


@dataclass(frozen=True)
class CentralGuarantee:
    """Central (epsilon, delta) guarantee on the anonymized collection."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("Attribute 'epsilon' must be nonnegative.")
        _check_probability("delta", self.delta)


@dataclass(frozen=True)
class AmplificationQuery:
    """
    Input of an amplification-by-shuffling bound.

    :param epsilon_local: Local budget of each of the n shuffled reports.
    :param n: Number of respondents reporting to the shuffler.
    :param delta: Target central delta.
    """

    epsilon_local: float
    n: int
    delta: float

    def __post_init__(self):
        if not self.epsilon_local >= 0:
            raise ValueError("Attribute 'epsilon_local' must be nonnegative.")
        if self.n < 1:
            raise ValueError("Attribute 'n' must be a positive count.")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("Attribute 'delta' must be in (0, 1).")

    @property
    def blanket(self) -> float:
        """Expected number of uniformly random reports, 2n/(1+e^ε)."""
        return 2.0 * self.n * float(expit(-self.epsilon_local))


@dataclass(frozen=True)
class FragmentPlan:
    """
    Report fragmenting parameters.

    :param tau: Number of fragments per respondent and attribute.
    :param epsilon_backstop: Budget of the permanent backstop randomization.
    :param epsilon_fragment: Budget of each fragment re-randomization.
    :param exposed: Number of fragments an adversary observes.
    """

    tau: int
    epsilon_backstop: float
    epsilon_fragment: float
    exposed: int = 1

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("Attribute 'tau' must be a positive count.")
        if not (self.epsilon_backstop >= 0 and self.epsilon_fragment >= 0):
            raise ValueError("Fragment budgets must be nonnegative.")
        if not 1 <= self.exposed <= self.tau:
            raise ValueError("Attribute 'exposed' must satisfy 1 <= exposed <= tau.")


@dataclass(frozen=True)
class CompositionQuery:
    """Input of the advanced composition theorem."""

    epsilon_step: float
    delta_step: float
    k: int
    delta_slack: float

    def __post_init__(self):
        if not self.epsilon_step >= 0:
            raise ValueError("Attribute 'epsilon_step' must be nonnegative.")
        _check_probability("delta_step", self.delta_step)
        if self.k < 1:
            raise ValueError("Attribute 'k' must be at least 1.")
        if not 0.0 < self.delta_slack < 1.0:
            raise ValueError("Attribute 'delta_slack' must be in (0, 1).")


@dataclass(frozen=True)
class SgdPrivacyQuery:
    """Input of the LDP-SGD central accounting."""

    epsilon_per_epoch: float
    epochs: int
    n: int
    delta: float

    def __post_init__(self):
        if not self.epsilon_per_epoch >= 0:
            raise ValueError("Attribute 'epsilon_per_epoch' must be nonnegative.")
        if self.epochs < 1 or self.n < 1:
            raise ValueError("Attributes 'epochs' and 'n' must be positive counts.")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("Attribute 'delta' must be in (0, 1).")


def flip_probability(epsilon: float) -> float:
    """
    Probability that binary randomized response reports the complement bit.

    :param epsilon: Local budget.

    :return: 1/(1+e^epsilon).
    """
    if not epsilon >= 0:
        raise ValueError("Epsilon must be nonnegative.")
    return float(expit(-epsilon))


def epsilon_from_flip(probability: float) -> float:
    """Inverse of :func:`flip_probability` on (0, 0.5]."""
    if not 0.0 < probability <= 0.5:
        raise ValueError("Flip probability must be in (0, 0.5].")
    return math.log1p(-probability) - math.log(probability)


def amplification_window(
    n: int, delta: float, mode: AmplificationMode | str
) -> tuple[float, float]:
    """
    Interval of local epsilons for which an amplification bound is defined.

    :param n: Number of respondents.
    :param delta: Central delta.
    :param mode: Amplification bound.

    :return: (lowest, highest) admissible local epsilon.
    """
    mode = AmplificationMode(mode)
    log_term = math.log(4.0 / delta)
    if mode is AmplificationMode.BINARY_EXACT:
        ratio = 2.0 * n / (14.0 * log_term)
        if ratio < 2.0:
            raise PreconditionError("14*log(4/delta) <= n")
        return 0.0, max(math.log(ratio - 1.0) - WINDOW_EDGE_MARGIN, 0.0)

    if mode is AmplificationMode.BINARY_SIMPLE:
        upper = math.log(n) - math.log(14.0 * log_term)
        if upper < 1.0:
            raise PreconditionError("1 <= log(n) - log(14*log(4/delta))")
        return 1.0, upper

    log_inv = math.log(1.0 / delta)
    if n <= log_inv:
        raise PreconditionError("n > log(1/delta)")
    return 0.0, math.log(n / log_inv) / 2.0


def amplify_binary_exact(query: AmplificationQuery) -> CentralGuarantee:
    """
    Central guarantee of n shuffled binary randomized responses, exact form.

    The blanket lambda = 2n/(1+e^ε) must satisfy 14 log(4/δ) <= lambda <= n.
    """
    n, delta = query.n, query.delta
    blanket = query.blanket
    if blanket < 14.0 * math.log(4.0 / delta):
        raise PreconditionError("14*log(4/delta) <= 2n/(1+e^epsilon)")
    if blanket > n:
        raise PreconditionError("2n/(1+e^epsilon) <= n")

    margin = blanket - math.sqrt(2.0 * blanket * math.log(2.0 / delta))
    epsilon = math.sqrt(32.0 * math.log(4.0 / delta) / margin) * (1.0 - margin / n)

    return CentralGuarantee(max(epsilon, 0.0), delta)


def amplify_binary_simple(query: AmplificationQuery) -> CentralGuarantee:
    """Central guarantee sqrt(64 e^ε log(4/δ)/n) of shuffled binary randomized response."""
    n, delta, epsilon = query.n, query.delta, query.epsilon_local

    if epsilon < 1.0:
        raise PreconditionError("1 <= epsilon_local")
    if epsilon > math.log(n) - math.log(14.0 * math.log(4.0 / delta)):
        raise PreconditionError("epsilon_local <= log(n) - log(14*log(4/delta))")
    if math.log(delta) < -math.log(n) ** 2:
        raise PreconditionError("delta >= n^(-log(n))")

    return CentralGuarantee(
        math.sqrt(64.0 * math.exp(epsilon) * math.log(4.0 / delta) / n), delta
    )


def amplify_generic(query: AmplificationQuery) -> CentralGuarantee:
    """
    Central guarantee for n shuffled reports of an arbitrary ε-LDP randomizer.

    Uses C·(e^ε−1)·sqrt(log(1/δ)/n) with C = :data:`GENERIC_AMPLIFICATION_CONSTANT`,
    never exceeding the local budget itself.
    """
    n, delta, epsilon = query.n, query.delta, query.epsilon_local
    log_inv = math.log(1.0 / delta)

    if n <= log_inv or epsilon > math.log(n / log_inv) / 2.0:
        raise PreconditionError("epsilon_local <= log(n/log(1/delta))/2")

    bound = GENERIC_AMPLIFICATION_CONSTANT * math.expm1(epsilon) * math.sqrt(log_inv / n)

    return CentralGuarantee(min(epsilon, bound), delta)


_AMPLIFIERS = {
    AmplificationMode.BINARY_EXACT: amplify_binary_exact,
    AmplificationMode.BINARY_SIMPLE: amplify_binary_simple,
    AmplificationMode.GENERIC: amplify_generic,
}


def amplify(query: AmplificationQuery, mode: AmplificationMode | str) -> CentralGuarantee:
    """Dispatch to the amplification bound named by ``mode``."""
    return _AMPLIFIERS[AmplificationMode(mode)](query)


def compose_sequential(epsilon1: float, epsilon2: float) -> float:
    """
    Budget of an ε1-DP randomizer whose output is re-randomized by an ε2-DP randomizer.

    Evaluates ln((e^{ε1+ε2}+1)/(e^{ε1}+e^{ε2})) in log-space.
    """
    if not (epsilon1 >= 0 and epsilon2 >= 0):
        raise ValueError("Epsilons must be nonnegative.")
    if math.isinf(epsilon1):
        return float(epsilon2)
    if math.isinf(epsilon2):
        return float(epsilon1)

    value = np.logaddexp(epsilon1 + epsilon2, 0.0) - np.logaddexp(epsilon1, epsilon2)

    return float(min(max(value, 0.0), epsilon1, epsilon2))


def report_frag_local(plan: FragmentPlan) -> LocalBudget:
    """Local budget when ``plan.exposed`` fragments of one backstop bit are observed."""
    epsilon = compose_sequential(
        plan.epsilon_backstop, plan.exposed * plan.epsilon_fragment
    )
    return LocalBudget(epsilon, 0.0, PrivacyModel.REPLACEMENT)


def report_frag_central(plan: FragmentPlan, n: int, delta: float) -> CentralGuarantee:
    """
    Central guarantee of report fragmenting over n respondents.

    min{ sqrt(8 τ ε_f log²(τ ε_f/δ)/n), sqrt(64 e^{ε_b} log(4/δ)/n) }
    """
    if plan.epsilon_fragment <= 1.0:
        raise PreconditionError("epsilon_fragment > 1")
    if not 0.0 < delta < 0.5:
        raise PreconditionError("delta < 1/2")
    if n < 1:
        raise ValueError("Attribute 'n' must be a positive count.")

    budget = plan.tau * plan.epsilon_fragment
    fragments = math.sqrt(8.0 * budget * math.log(budget / delta) ** 2 / n)
    backstop = math.sqrt(64.0 * math.exp(plan.epsilon_backstop) * math.log(4.0 / delta) / n)

    return CentralGuarantee(min(fragments, backstop), delta)


def basic_composition(epsilon: float, delta: float, k: int) -> CentralGuarantee:
    """Sequential composition (kε, kδ) of k mechanisms."""
    if k < 1:
        raise ValueError("Attribute 'k' must be at least 1.")
    return CentralGuarantee(k * epsilon, k * delta)


def advanced_composition(query: CompositionQuery) -> CentralGuarantee:
    """
    Advanced composition of k adaptive (ε, δ)-DP mechanisms.

    (kε²/2 + √k·ε·sqrt(2 log(sqrt(kπ/2)·ε/δ')), δ' + kδ)
    """
    k, epsilon = query.k, query.epsilon_step
    delta = query.delta_slack + k * query.delta_step

    if epsilon == 0:
        return CentralGuarantee(0.0, delta)

    argument = math.sqrt(k * math.pi / 2.0) * epsilon / query.delta_slack
    if argument <= 1.0:
        raise PreconditionError(
            "sqrt(k*pi/2)*epsilon/delta' > 1",
            "Advanced composition undefined for sqrt(k*pi/2)*epsilon/delta' <= 1; "
            "use basic_composition (k*epsilon, k*delta) instead.",
        )

    total = k * epsilon**2 / 2.0 + math.sqrt(k) * epsilon * math.sqrt(
        2.0 * math.log(argument)
    )
    return CentralGuarantee(total, delta)


def ldp_sgd_central(query: SgdPrivacyQuery) -> CentralGuarantee:
    """
    Central guarantee of T epochs of shuffled LDP-SGD.

    Each epoch is amplified with :func:`amplify_generic` at δ/(2T) and the epochs are
    composed with slack δ/2; the smaller of the advanced and basic compositions is kept.
    """
    if query.epsilon_per_epoch > math.log(query.n) / 4.0:
        raise PreconditionError("epsilon_per_epoch <= log(n)/4")

    epoch_delta = query.delta / (2.0 * query.epochs)
    per_epoch = amplify_generic(
        AmplificationQuery(query.epsilon_per_epoch, query.n, epoch_delta)
    ).epsilon

    epsilon = basic_composition(per_epoch, epoch_delta, query.epochs).epsilon
    try:
        advanced = advanced_composition(
            CompositionQuery(per_epoch, epoch_delta, query.epochs, query.delta / 2.0)
        )
        epsilon = min(epsilon, advanced.epsilon)
    except PreconditionError:
        logger.debug("Advanced composition undefined; keeping basic composition.")

    return CentralGuarantee(epsilon, query.delta)


def convert_model(budget: LocalBudget, target: PrivacyModel | str) -> LocalBudget:
    """
    Restate a local budget under another neighbouring relation.

    Removal to replacement doubles epsilon; replacement budgets are already valid
    removal budgets.
    """
    target = PrivacyModel(target)
    if target is budget.model or target is PrivacyModel.REMOVAL:
        return LocalBudget(budget.epsilon, budget.delta, target)

    return LocalBudget(2.0 * budget.epsilon, budget.delta, target)


def mi_lower_bound(tpr: float, fpr: float) -> float:
    """
    Lower bound on epsilon implied by a membership-inference attack, -ln(1-(TPR-FPR)).
    """
    if not (0.0 <= fpr <= 1.0 and 0.0 <= tpr <= 1.0):
        raise ValueError("Rates must be probabilities.")
    advantage = tpr - fpr
    if advantage <= 0:
        return 0.0
    if advantage >= 1.0:
        raise UnboundedError("TPR - FPR = 1 implies an unbounded epsilon.")
    return -math.log1p(-advantage)


def analytic_gaussian_delta(sigma: float, epsilon: float, sensitivity: float) -> float:
    """Smallest delta the Gaussian mechanism N(0, σ²) satisfies at the given epsilon."""
    ratio = sensitivity / (2.0 * sigma)
    shift = epsilon * sigma / sensitivity
    return float(
        ndtr(ratio - shift) - math.exp(epsilon + float(log_ndtr(-ratio - shift)))
    )


def classic_gaussian_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Classic calibration sqrt(2 ln(1.25/δ))·Δ/ε."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def gaussian_sigma(epsilon: float, delta: float, sensitivity: float = 1.0) -> float:
    """
    Analytic Gaussian calibration, rounded up onto the grid j·SIGMA_GRID_STEP·Δ.

    :param epsilon: Central epsilon, > 0.
    :param delta: Central delta in (0, 1).
    :param sensitivity: l2 sensitivity of the released counts.

    :return: Smallest grid sigma meeting the (epsilon, delta) condition.
    """
    if not (epsilon > 0 and 0.0 < delta < 1.0 and sensitivity > 0):
        raise ValueError("Require epsilon > 0, 0 < delta < 1 and sensitivity > 0.")

    def excess(sigma: float) -> float:
        return analytic_gaussian_delta(sigma, epsilon, sensitivity) - delta

    upper = classic_gaussian_sigma(epsilon, delta, sensitivity)
    while excess(upper) > 0:
        upper *= 2.0
    lower = upper
    while excess(lower) <= 0:
        lower /= 2.0

    root = brentq(excess, lower, upper, xtol=1e-12 * sensitivity)
    step = SIGMA_GRID_STEP * sensitivity
    sigma = math.ceil(root / step) * step
    while excess(sigma) > 0:
        sigma += step

    return sigma


def solve_local_for_central(
    target: CentralGuarantee, n: int, mode: AmplificationMode | str
) -> LocalBudget:
    """
    Largest local epsilon whose amplification meets a central target.

    Bisection (Brent) on the monotone amplification bound inside its window.

    :param target: Central guarantee to reach.
    :param n: Number of respondents per shuffler.
    :param mode: Amplification bound.

    :return: Removal local budget.
    """
    mode = AmplificationMode(mode)
    if target.delta <= 0:
        raise ValueError("Central delta must be positive.")

    lower, upper = amplification_window(n, target.delta, mode)

    def central(epsilon: float) -> float:
        return amplify(AmplificationQuery(epsilon, n, target.delta), mode).epsilon

    low_value, high_value = central(lower), central(upper)
    if not low_value <= target.epsilon <= high_value:
        raise InfeasibleTargetError(target.epsilon, (low_value, high_value))

    if target.epsilon == low_value:
        epsilon = lower
    elif target.epsilon == high_value:
        epsilon = upper
    else:
        epsilon = brentq(
            lambda value: central(value) - target.epsilon,
            lower,
            upper,
            xtol=1e-13,
            rtol=4 * np.finfo(float).eps,
        )
    logger.debug(
        "Solved epsilon_local=%.6f for epsilon_c=%g (n=%d, %s).",
        epsilon,
        target.epsilon,
        n,
        mode.value,
    )
    return LocalBudget(float(epsilon), 0.0, PrivacyModel.REMOVAL)


def match_fragment_budget(
    epsilon_backstop: float, tau: int, rule: str = "variance"
) -> float:
    """
    Fragment budget balancing the two noise layers of report fragmenting.

    ``variance`` equates the averaged fragment variance Var(ε_f)/τ with the backstop
    variance Var(ε_b), Var(ε) = e^ε/(e^ε−1)²; ``accuracy_terms`` equates the two terms of
    the accuracy bound, τ·ε_f = e^{ε_b}.
    """
    if tau < 1 or not epsilon_backstop > 0:
        raise ValueError("Require tau >= 1 and epsilon_backstop > 0.")
    if math.isinf(epsilon_backstop):
        return math.inf
    if rule == "variance":
        return 2.0 * math.asinh(math.sinh(epsilon_backstop / 2.0) / math.sqrt(tau))
    if rule == "accuracy_terms":
        return math.exp(epsilon_backstop) / tau
    raise ValueError(f"Unknown fragment budget rule '{rule}'.")
