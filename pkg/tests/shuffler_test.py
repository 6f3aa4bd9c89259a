# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest

from fragment_shuffle.errors import EmptyReleaseError, ReportFormatError, RoutingError
from fragment_shuffle.shuffler import (
    CROWD_ABORT,
    CrowdConfig,
    CrowdPartition,
    ShufflerInstance,
    abort_probability,
    build_instances,
    crowd_deletions,
    decode_payload,
    delete_uniformly,
    deletion_bound,
    encode_payload,
    ingest,
    noisy_crowd_size,
    randomized_report_deletion,
    release_shuffled,
    release_summed,
    sample_laplace,
)


def test_payload_layout():
    payload = encode_payload(np.array([1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0]))

    assert len(payload) == 4 + 2
    assert payload[:4] == (11).to_bytes(4, "little")
    np.testing.assert_array_equal(
        decode_payload(payload), [1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0]
    )


def test_payload_errors():
    with pytest.raises(ReportFormatError):
        encode_payload(np.array([0, 2]))
    with pytest.raises(ReportFormatError):
        decode_payload(b"\x01")
    with pytest.raises(ReportFormatError):
        decode_payload((9).to_bytes(4, "little") + b"\x00")


def test_build_instances_layout():
    shufflers = build_instances(5, 2)

    assert [shuffler.uid for shuffler in shufflers] == [0, 1]
    assert shufflers[0].channels == [0, 1, 2]
    assert shufflers[1].channels == [0, 1]
    assert [shuffler.channels for shuffler in build_instances(3)] == [[0], [0], [0]]

    with pytest.raises(ValueError):
        build_instances(0)


def test_ingest_and_routing():
    shuffler = ShufflerInstance(0, [0, 1])

    assert ingest(shuffler, 1, b"abc", respondent=42)
    assert len(shuffler) == 1
    with pytest.raises(RoutingError):
        ingest(shuffler, 3, b"abc", respondent=42)
    with pytest.raises(TypeError):
        ingest(shuffler, 0, [1, 0], respondent=1)
    with pytest.raises(TypeError):
        ShufflerInstance("a", [0])


def test_release_shuffled_preserves_multiset(stream):
    shuffler = ShufflerInstance(0, [0])
    payloads = [bytes([value]) for value in (3, 1, 1, 7, 9)]
    for respondent, payload in enumerate(payloads):
        ingest(shuffler, 0, payload, respondent)

    released = release_shuffled(shuffler, 0, stream)

    assert sorted(released) == sorted(payloads)
    assert all(isinstance(entry, bytes) for entry in released)
    assert len(shuffler) == 0
    with pytest.raises(EmptyReleaseError):
        release_shuffled(shuffler, 0, stream)


def test_release_shuffled_uniform_order(stream):
    orders = Counter()
    for trial in range(6000):
        shuffler = ShufflerInstance(0, [0])
        for respondent, payload in enumerate((b"a", b"b", b"c")):
            ingest(shuffler, 0, payload, respondent)
        orders[tuple(release_shuffled(shuffler, 0, stream.child(trial)))] += 1

    assert len(orders) == 6
    for count in orders.values():
        assert count / 6000 == pytest.approx(1 / 6, abs=0.03)


def test_release_summed():
    shuffler = ShufflerInstance(0, [0, 1])
    for respondent, bits in enumerate(([1, 0, 1], [1, 1, 0], [0, 0, 1])):
        ingest(shuffler, 0, encode_payload(np.array(bits)), respondent)

    np.testing.assert_array_equal(release_summed(shuffler, 0), [2, 1, 2])

    ingest(shuffler, 1, encode_payload(np.array([1])), 0)
    ingest(shuffler, 1, encode_payload(np.array([1, 0])), 1)
    with pytest.raises(ReportFormatError):
        release_summed(shuffler, 1)


def test_failed_summed_release_keeps_buffer():
    shuffler = ShufflerInstance(0, [0, 1])
    ingest(shuffler, 0, encode_payload(np.array([1, 0])), 0)
    ingest(shuffler, 0, encode_payload(np.array([1])), 1)
    ingest(shuffler, 1, encode_payload(np.array([1])), 2)
    ingest(shuffler, 1, b"\x01", 3)

    for channel in (0, 1):
        with pytest.raises(ReportFormatError):
            release_summed(shuffler, channel)
        assert len(shuffler.buffer(channel)) == 2

    shuffler.buffer(0).pop()
    np.testing.assert_array_equal(release_summed(shuffler, 0), [1, 0])
    assert len(shuffler.buffer(0)) == 0


def test_sample_laplace_moments(stream):
    draws = np.array([sample_laplace(2.0, stream) for _ in range(20_000)])

    assert draws.mean() == pytest.approx(0.0, abs=0.1)
    assert np.abs(draws).mean() == pytest.approx(2.0, rel=0.05)
    with pytest.raises(ValueError):
        sample_laplace(0.0, stream)


def test_crowd_config():
    cfg = CrowdConfig(1.0, 0.1)

    assert cfg.scale == 2.0
    assert cfg.shift == pytest.approx(2.0 * math.log(20.0))
    assert noisy_crowd_size(100, cfg, 0.0) == pytest.approx(100 - cfg.shift)
    with pytest.raises(ValueError):
        CrowdConfig(0.0, 0.1)
    with pytest.raises(ValueError):
        CrowdConfig(1.0, 1.0)


def test_abort_probability_and_bound():
    cfg = CrowdConfig(1.0, 0.1)

    assert abort_probability(cfg) == pytest.approx(0.025)
    assert abort_probability(cfg, crowds=10) == pytest.approx(1 - 0.975**10)
    assert deletion_bound(cfg) == pytest.approx(4 * math.log(20.0))
    assert deletion_bound(cfg) == pytest.approx(11.98, abs=0.01)


def test_randomized_report_deletion(stream):
    cfg = CrowdConfig(1.0, 0.1)
    reports = [bytes([i]) for i in range(100)]
    trials, aborts, within = 10_000, 0, 0
    for trial in range(trials):
        outcome = randomized_report_deletion(
            [CrowdPartition(3, list(reports))], cfg, stream.child(trial)
        )
        noise = sample_laplace(cfg.scale, stream.child(trial))
        if outcome is CROWD_ABORT:
            assert noisy_crowd_size(100, cfg, noise) > 100
            aborts += 1
            continue
        (released,) = outcome
        assert released.crowd_id == 3
        assert set(released.reports) <= set(reports)
        assert released.reports == sorted(released.reports)
        deleted = 100 - len(released)
        assert deleted == crowd_deletions(100, cfg, noise)
        within += deleted <= deletion_bound(cfg)

    rate = abort_probability(cfg)
    assert not CROWD_ABORT
    assert within / trials >= 0.9
    assert abs(aborts / trials - rate) <= 4 * math.sqrt(rate * (1 - rate) / trials)


@pytest.mark.parametrize(
    "epsilon_cr, delta_cr, expected", [(1.0, 0.1, 6), (0.5, 0.01, 22), (2.0, 0.5, 2)]
)
def test_crowd_deletions_without_noise(epsilon_cr, delta_cr, expected):
    cfg = CrowdConfig(epsilon_cr, delta_cr)

    assert expected == math.ceil(2 / epsilon_cr * math.log(2 / delta_cr))
    assert crowd_deletions(100, cfg, 0.0) == expected
    assert crowd_deletions(1, cfg, 0.0) == 1


def test_delete_uniformly(stream):
    partition = CrowdPartition(0, [bytes([i]) for i in range(10)])
    trials = 10_000
    deleted = Counter()
    for trial in range(trials):
        released = delete_uniformly(partition, 1, stream.child(trial))
        assert len(released) == 9
        deleted.update(set(partition.reports) - set(released.reports))

    tolerance = 4 * math.sqrt(0.1 * 0.9 / trials)
    for report in partition.reports:
        assert abs(deleted[report] / trials - 0.1) <= tolerance
    assert len(delete_uniformly(partition, 0, stream)) == 10
    with pytest.raises(ValueError):
        delete_uniformly(partition, 11, stream)


def test_randomized_report_deletion_aborts_whole_batch(stream):
    cfg = CrowdConfig(0.01, 0.99)
    partitions = [CrowdPartition(i, [b"x"] * 5) for i in range(200)]

    assert randomized_report_deletion(partitions, cfg, stream) is CROWD_ABORT
    with pytest.raises(ValueError):
        randomized_report_deletion([CrowdPartition(0)], cfg, stream)


def test_summed_release_folds_shuffled_release(stream):
    payloads = [
        encode_payload(row) for row in stream.generator.integers(0, 2, size=(50, 9))
    ]
    summed, shuffled = ShufflerInstance(0, [0]), ShufflerInstance(1, [0])
    for respondent, payload in enumerate(payloads):
        ingest(summed, 0, payload, respondent)
        ingest(shuffled, 0, payload, respondent)

    folded = np.sum(
        [decode_payload(payload) for payload in release_shuffled(shuffled, 0, stream)],
        axis=0,
    )

    np.testing.assert_array_equal(release_summed(summed, 0), folded)
