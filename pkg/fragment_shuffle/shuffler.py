# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
In-process shuffler instances and crowd thresholding.

Reports are opaque length-prefixed payloads. Respondent ids are held next to the
buffered payload until the channel is released and are never part of the output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fragment_shuffle.errors import EmptyReleaseError, ReportFormatError, RoutingError
from fragment_shuffle.randomizers import RandomStream, destination_for


logger = logging.getLogger(__name__)

_ARITY = np.dtype("<u4")


def encode_payload(bits: np.ndarray) -> bytes:
    """
    Serialise a bit vector as a little-endian uint32 arity followed by packed bits.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise ReportFormatError("Payload entries must be bits.")
    return np.array([bits.size], dtype=_ARITY).tobytes() + np.packbits(bits).tobytes()


def decode_payload(payload: bytes) -> np.ndarray:
    """Inverse of :func:`encode_payload`."""
    if len(payload) < _ARITY.itemsize:
        raise ReportFormatError("Payload shorter than its length prefix.")
    arity = int(np.frombuffer(payload[: _ARITY.itemsize], dtype=_ARITY)[0])
    body = np.frombuffer(payload[_ARITY.itemsize :], dtype=np.uint8)
    if body.size != math.ceil(arity / 8):
        raise ReportFormatError(
            f"Payload declares {arity} bits but carries {body.size} bytes."
        )
    return np.unpackbits(body, count=arity)


class ShufflerInstance:
    """
    Anonymizing intermediary with a fixed set of channels.

    :param uid: Instance identifier.
    :param channels: Channel identifiers declared on the instance.
    """

    def __init__(self, uid: int, channels: list[int] | range):
        self.uid = uid
        self._channels: dict[int, list[tuple[bytes, int]]] = {
            int(channel): [] for channel in channels
        }

    @property
    def uid(self) -> int:
        """Instance identifier."""
        return self._uid

    @uid.setter
    def uid(self, value: int):
        if not isinstance(value, (int, np.integer)):
            raise TypeError("Attribute 'uid' must be an integer.")
        self._uid = int(value)

    @property
    def channels(self) -> list[int]:
        """Declared channel ids."""
        return list(self._channels)

    def buffer(self, channel: int) -> list[tuple[bytes, int]]:
        """Buffered (payload, respondent) pairs of a channel."""
        if channel not in self._channels:
            raise RoutingError(
                f"Channel {channel} is not declared on shuffler instance {self.uid}."
            )
        return self._channels[channel]

    def __len__(self) -> int:
        return sum(len(entries) for entries in self._channels.values())


@dataclass
class CrowdPartition:
    """Reports of one crowd awaiting thresholding."""

    crowd_id: int
    reports: list[bytes] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.reports)


@dataclass(frozen=True)
class CrowdConfig:
    """Privacy parameters of randomized report deletion."""

    epsilon_cr: float
    delta_cr: float

    def __post_init__(self):
        if not self.epsilon_cr > 0:
            raise ValueError("Attribute 'epsilon_cr' must be positive.")
        if not 0.0 < self.delta_cr < 1.0:
            raise ValueError("Attribute 'delta_cr' must be in (0, 1).")

    @property
    def scale(self) -> float:
        """Laplace scale 2/epsilon_cr."""
        return 2.0 / self.epsilon_cr

    @property
    def shift(self) -> float:
        """Downward shift (2/epsilon_cr)·log(2/delta_cr) of the noisy count."""
        return self.scale * math.log(2.0 / self.delta_cr)


class CrowdAbort:
    """Outcome of a release batch aborted by the crowd threshold."""

    def __repr__(self) -> str:
        return "CROWD_ABORT"

    def __bool__(self) -> bool:
        return False


CROWD_ABORT = CrowdAbort()


def build_instances(n_destinations: int, instances: int = 0) -> list[ShufflerInstance]:
    """
    Declare the shuffler instances and channels addressed by ``n_destinations`` streams.

    :param n_destinations: Number of flat destination indices.
    :param instances: Number K of instances; 0 gives one instance per destination.
    """
    if n_destinations < 1:
        raise ValueError("At least one destination is required.")
    instances = instances or n_destinations
    channels: dict[int, list[int]] = {uid: [] for uid in range(instances)}
    for index in range(n_destinations):
        uid, channel = destination_for(index, instances)
        channels[uid].append(channel)

    return [ShufflerInstance(uid, chans) for uid, chans in channels.items() if chans]


def ingest(
    instance: ShufflerInstance, channel: int, report: bytes, respondent: int
) -> bool:
    """
    Buffer a report on a channel.

    :return: Acknowledgement.
    """
    if not isinstance(report, (bytes, bytearray)):
        raise TypeError("Reports must be opaque bytes.")
    instance.buffer(channel).append((bytes(report), respondent))
    return True


def _payloads(instance: ShufflerInstance, channel: int) -> list[bytes]:
    entries = instance.buffer(channel)
    if not entries:
        raise EmptyReleaseError(
            f"Channel {channel} of shuffler instance {instance.uid} is empty."
        )
    return [payload for payload, _ in entries]


def release_shuffled(
    instance: ShufflerInstance, channel: int, rng: RandomStream
) -> list[bytes]:
    """Release a channel as a uniformly random permutation of its payloads."""
    payloads = _payloads(instance, channel)
    instance.buffer(channel).clear()
    order = rng.generator.permutation(len(payloads))
    return [payloads[i] for i in order]


def release_summed(instance: ShufflerInstance, channel: int) -> np.ndarray:
    """
    Release only the coordinate-wise sum of the bit payloads of a channel.

    The channel keeps its reports when a payload is malformed or arities differ.
    """
    vectors = [decode_payload(payload) for payload in _payloads(instance, channel)]
    arities = {vector.size for vector in vectors}
    if len(arities) != 1:
        raise ReportFormatError(f"Mixed report arities {sorted(arities)} on one channel.")
    instance.buffer(channel).clear()
    return np.sum(vectors, axis=0, dtype=np.int64)


def sample_laplace(scale: float, rng: RandomStream) -> float:
    """Zero-mean Laplace draw by inversion of one uniform."""
    if not scale > 0:
        raise ValueError("Laplace scale must be positive.")
    uniform = rng.generator.random()
    while uniform == 0.0:
        uniform = rng.generator.random()
    centred = uniform - 0.5
    return -scale * math.copysign(1.0, centred) * math.log1p(-2.0 * abs(centred))


def noisy_crowd_size(n_i: int, cfg: CrowdConfig, noise: float) -> float:
    """Noisy, downward shifted crowd size before clamping at 0."""
    return n_i + noise - cfg.shift


def abort_probability(cfg: CrowdConfig, crowds: int = 1) -> float:
    """Probability that at least one of ``crowds`` noisy sizes exceeds the true size."""
    return -math.expm1(crowds * math.log1p(-cfg.delta_cr / 4.0))


def deletion_bound(cfg: CrowdConfig, crowds: int = 1) -> float:
    """High-probability bound (4/epsilon_cr)·log(2P/delta_cr) on deletions per crowd."""
    return 4.0 / cfg.epsilon_cr * math.log(2.0 * crowds / cfg.delta_cr)


def crowd_deletions(n_i: int, cfg: CrowdConfig, noise: float) -> int:
    """Number of reports deleted from a crowd of ``n_i`` for a given Laplace draw."""
    return min(n_i, math.ceil(n_i - max(noisy_crowd_size(n_i, cfg, noise), 0.0)))


def delete_uniformly(
    partition: CrowdPartition, deletions: int, rng: RandomStream
) -> CrowdPartition:
    """Remove ``deletions`` uniformly chosen reports, keeping the others in order."""
    size = len(partition)
    if not 0 <= deletions <= size:
        raise ValueError(f"Cannot delete {deletions} of {size} reports.")
    kept = np.sort(rng.generator.choice(size, size=size - deletions, replace=False))
    return CrowdPartition(partition.crowd_id, [partition.reports[i] for i in kept])


def randomized_report_deletion(
    partitions: list[CrowdPartition], cfg: CrowdConfig, rng: RandomStream
) -> list[CrowdPartition] | CrowdAbort:
    """
    Threshold crowds by deleting a noisy number of uniformly chosen reports.

    Each crowd keeps max(n + Laplace(2/ε) − (2/ε)·log(2/δ), 0) reports, with the deletion
    count rounded up. The whole batch aborts if any noisy size exceeds its crowd.

    :return: Thresholded partitions, or :data:`CROWD_ABORT`.
    """
    if any(len(partition) == 0 for partition in partitions):
        raise ValueError("Crowds must be nonempty before thresholding.")

    noises = [sample_laplace(cfg.scale, rng) for _ in partitions]
    if any(
        noisy_crowd_size(len(part), cfg, noise) > len(part)
        for noise, part in zip(noises, partitions)
    ):
        logger.info("Crowd threshold aborted the release batch.")
        return CROWD_ABORT

    return [
        delete_uniformly(partition, crowd_deletions(len(partition), cfg, noise), rng)
        for noise, partition in zip(noises, partitions)
    ]
