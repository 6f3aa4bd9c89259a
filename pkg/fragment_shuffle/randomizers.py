# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
Local randomizers run by simulated respondents.

Binary randomized response, attribute fragmented k-RAPPOR, report fragmenting with a
permanent backstop bit, and their exact aggregate samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fragment_shuffle.accounting import FragmentPlan, flip_probability
from fragment_shuffle.errors import DegenerateError, ReportFormatError


class RandomStream:
    """
    Reproducible random stream identified by a seed and a stream id path.

    Two streams with the same seed and ids produce identical draws.

    :param seed: Nonnegative 64-bit seed.
    :param stream_id: Path of integer ids identifying the stream.
    """

    def __init__(self, seed: int, stream_id: tuple[int, ...] = ()):
        self.seed = seed
        self.stream_id = tuple(stream_id)
        self._generator = np.random.default_rng(
            np.random.SeedSequence([self.seed, *self.stream_id])
        )

    @property
    def seed(self) -> int:
        """Root seed."""
        return self._seed

    @seed.setter
    def seed(self, value: int):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise TypeError("Attribute 'seed' must be an integer.")
        if not 0 <= value < 2**64:
            raise ValueError("Attribute 'seed' must be a 64-bit unsigned value.")
        self._seed = int(value)

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator."""
        return self._generator

    def child(self, *ids: int) -> RandomStream:
        """Independent stream for a sub-task, e.g. one respondent or one trial."""
        return RandomStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class OneHotRecord:
    """Respondent value encoded as a one-hot vector of length k."""

    index: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("Domain size 'k' must be positive.")
        if not 0 <= self.index < self.k:
            raise ValueError(f"Value {self.index} outside the domain [0, {self.k}).")

    def bits(self) -> np.ndarray:
        """Dense 0/1 vector with a single set bit."""
        bits = np.zeros(self.k, dtype=np.uint8)
        bits[self.index] = 1
        return bits


@dataclass(frozen=True)
class BitReport:
    """Randomized bit of one attribute, addressed to (instance, channel)."""

    attribute: int
    value: int
    destination: tuple[int, int]

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError("Attribute 'value' must be a bit.")


@dataclass(frozen=True)
class FragmentReport:
    """One of the tau fragments re-randomized from a backstop bit."""

    fragment_index: int
    inner: BitReport

    def __post_init__(self):
        if self.fragment_index < 1:
            raise ValueError("Attribute 'fragment_index' is counted from 1.")


def encode_one_hot(value: int, k: int) -> OneHotRecord:
    """One-hot encode a domain element of [0, k)."""
    return OneHotRecord(int(value), int(k))


def decode_one_hot(bits: np.ndarray) -> int:
    """
    Index of the single set bit of a one-hot vector.

    :param bits: 0/1 vector.

    :return: Encoded value.
    """
    bits = np.asarray(bits)
    (ones,) = np.nonzero(bits)
    if bits.ndim != 1 or len(ones) != 1:
        raise ReportFormatError("Expected a vector with exactly one set bit.")
    return int(ones[0])


def randomize_bit(bit: int, epsilon: float, rng: RandomStream) -> int:
    """Report ``bit`` with probability e^ε/(1+e^ε), else its complement."""
    if bit not in (0, 1):
        raise ValueError("Input must be a bit.")
    flip = rng.generator.random() < flip_probability(epsilon)
    return int(bit) ^ int(flip)


def randomize_bits(bits: np.ndarray, epsilon: float, rng: RandomStream) -> np.ndarray:
    """Vectorised :func:`randomize_bit` with independent coins per entry."""
    bits = np.asarray(bits, dtype=np.uint8)
    flips = rng.generator.random(bits.shape) < flip_probability(epsilon)
    return bits ^ flips.astype(np.uint8)


def destination_for(flat_index: int, instances: int) -> tuple[int, int]:
    """
    Shuffler destination of a report stream.

    :param flat_index: Attribute index, or fragment * k + attribute for fragments.
    :param instances: Number K of shuffler instances.

    :return: (instance id, channel id) = (index mod K, index // K).
    """
    if instances < 1:
        raise ValueError("At least one shuffler instance is required.")
    if flat_index < 0:
        raise ValueError("Destination index must be nonnegative.")
    return flat_index % instances, flat_index // instances


def att_frag_krappor(
    record: OneHotRecord,
    epsilon_local: float,
    rng: RandomStream,
    instances: int | None = None,
) -> list[BitReport]:
    """
    Attribute fragmented k-RAPPOR: one independently randomized bit per attribute.

    :param record: Respondent value.
    :param epsilon_local: Budget of each bit.
    :param rng: Respondent stream.
    :param instances: Number of shuffler instances, defaults to k.

    :return: k reports with distinct destinations.
    """
    instances = instances or record.k
    noisy = randomize_bits(record.bits(), epsilon_local, rng)
    return [
        BitReport(j, int(bit), destination_for(j, instances))
        for j, bit in enumerate(noisy)
    ]


def report_frag(  # pylint: disable=too-many-arguments
    bit: int,
    epsilon_backstop: float,
    epsilon_fragment: float,
    tau: int,
    rng: RandomStream,
    *,
    attribute: int = 0,
    k: int = 1,
    instances: int | None = None,
) -> list[FragmentReport]:
    """
    Report fragmenting of one bit.

    A backstop bit is drawn once at ``epsilon_backstop`` and each of the tau fragments
    re-randomizes it independently at ``epsilon_fragment``.

    :param bit: Input bit.
    :param epsilon_backstop: Budget of the permanent backstop randomization.
    :param epsilon_fragment: Budget of each fragment.
    :param tau: Number of fragments.
    :param rng: Respondent stream.
    :param attribute: Attribute the bit belongs to.
    :param k: Number of attributes sharing the destination space.
    :param instances: Number of shuffler instances, defaults to k * tau.

    :return: tau fragment reports with distinct destinations.
    """
    if tau < 1:
        raise ValueError("Attribute 'tau' must be a positive count.")
    instances = instances or k * tau
    backstop = randomize_bit(bit, epsilon_backstop, rng)
    fragments = randomize_bits(
        np.full(tau, backstop, dtype=np.uint8), epsilon_fragment, rng
    )
    return [
        FragmentReport(
            i + 1,
            BitReport(attribute, int(value), destination_for(i * k + attribute, instances)),
        )
        for i, value in enumerate(fragments)
    ]


def att_and_report_frag(
    record: OneHotRecord,
    plan: FragmentPlan,
    rng: RandomStream,
    instances: int | None = None,
) -> list[FragmentReport]:
    """
    Report fragmenting applied independently to every attribute of a one-hot record.

    Report (i, j) carries fragment i of attribute j and is addressed to the flat
    destination i * k + j.
    """
    k, tau = record.k, plan.tau
    instances = instances or k * tau
    backstop = randomize_bits(record.bits(), plan.epsilon_backstop, rng)
    fragments = randomize_bits(
        np.broadcast_to(backstop, (tau, k)), plan.epsilon_fragment, rng
    )
    return [
        FragmentReport(
            i + 1,
            BitReport(j, int(fragments[i, j]), destination_for(i * k + j, instances)),
        )
        for i in range(tau)
        for j in range(k)
    ]


def sampled_attribute(
    record: OneHotRecord,
    epsilon: float,
    rng: RandomStream,
    instances: int | None = None,
) -> BitReport:
    """Randomized bit of a single uniformly sampled attribute."""
    attribute = int(rng.generator.integers(record.k))
    value = randomize_bit(int(attribute == record.index), epsilon, rng)
    return BitReport(attribute, value, destination_for(attribute, instances or record.k))


def _flip_counts(
    ones: np.ndarray, n: int, probability: float, rng: RandomStream
) -> np.ndarray:
    ones = np.asarray(ones, dtype=np.int64)
    kept = rng.generator.binomial(ones, 1.0 - probability)
    flipped = rng.generator.binomial(n - ones, probability)
    return kept + flipped


def att_frag_sums(counts: np.ndarray, epsilon: float, rng: RandomStream) -> np.ndarray:
    """
    Released per-attribute sums of attribute fragmented k-RAPPOR, sampled exactly.

    :param counts: Number of respondents holding each value.
    :param epsilon: Budget of each bit.
    :param rng: Stream for the aggregate draw.

    :return: Sum of the randomized bits of every attribute.
    """
    counts = np.asarray(counts, dtype=np.int64)
    return _flip_counts(counts, int(counts.sum()), flip_probability(epsilon), rng)


def report_frag_sums(
    counts: np.ndarray, plan: FragmentPlan, rng: RandomStream
) -> np.ndarray:
    """
    Released (tau, k) fragment sums of report fragmenting, sampled exactly.

    All fragments of an attribute share the same backstop population.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    backstop = _flip_counts(counts, n, flip_probability(plan.epsilon_backstop), rng)
    probability = flip_probability(plan.epsilon_fragment)
    return np.vstack(
        [_flip_counts(backstop, n, probability, rng) for _ in range(plan.tau)]
    )


def expected_set_bits(k: int, epsilon: float) -> float:
    """Expected number of set bits sent by one respondent under k-RAPPOR."""
    probability = flip_probability(epsilon)
    return (1.0 - probability) + (k - 1) * probability


def expected_fragment_set_bits(k: int, plan: FragmentPlan) -> float:
    """Expected number of set fragment bits sent by one respondent."""
    backstop = flip_probability(plan.epsilon_backstop)
    fragment = flip_probability(plan.epsilon_fragment)
    one = (1.0 - backstop) * (1.0 - fragment) + backstop * fragment
    zero = backstop * (1.0 - fragment) + (1.0 - backstop) * fragment
    return plan.tau * (one + (k - 1) * zero)


def debias_factors(epsilon: float) -> tuple[float, float]:
    """
    Scale and offset of the randomized response debiasing r -> scale * r - offset.

    :return: ((e^ε+1)/(e^ε−1), 1/(e^ε−1)).
    """
    if epsilon == 0:
        raise DegenerateError("Debiasing is undefined at epsilon = 0.")
    if not epsilon > 0:
        raise ValueError("Epsilon must be positive.")
    if math.isinf(epsilon):
        return 1.0, 0.0
    return 1.0 / math.tanh(epsilon / 2.0), 1.0 / math.expm1(epsilon)


def debias_bit(value: float | np.ndarray, epsilon: float) -> float | np.ndarray:
    """Unbiased estimate of the input bit, ((e^ε+1)r − 1)/(e^ε−1)."""
    scale, offset = debias_factors(epsilon)
    return scale * np.asarray(value, dtype=float) - offset
