import numpy as np
import pytest

from msrd.services.event_table import EventTable
from msrd.services.streams import EventStream, make_generator


def test_total_and_prefix_sums():
    table = EventTable(5)
    table.rebuild([1.0, 2.0, 0.0, 3.0, 4.0])
    assert table.total == 10.0
    assert table.prefix_sum(2) == 3.0
    assert table.tree_total() == pytest.approx(10.0)


@pytest.mark.parametrize("target, expected", [(0.0, 0), (0.999, 0), (1.0, 1), (2.999, 1), (3.0, 3), (6.5, 4), (9.99, 4)])
def test_sample_intervals(target, expected):
    table = EventTable(5)
    table.rebuild([1.0, 2.0, 0.0, 3.0, 4.0])
    assert table.sample(target) == expected


def test_sample_skips_zero_rate_channels():
    table = EventTable(4)
    table.rebuild([2.0, 0.0, 0.0, 0.0])
    # a target at the very top still lands on a channel that can fire
    assert table.sample(2.0) == 0


def test_update_matches_rebuild():
    rng = np.random.default_rng(0)
    rates = rng.random(37).tolist()
    table = EventTable(37)
    table.rebuild(rates)
    for _ in range(200):
        index = int(rng.integers(37))
        rates[index] = float(rng.random())
        table.update(index, rates[index])
    fresh = EventTable(37)
    fresh.rebuild(rates)
    assert table.total == pytest.approx(fresh.total, rel=1e-12)
    for count in (1, 10, 37):
        assert table.prefix_sum(count) == pytest.approx(fresh.prefix_sum(count), rel=1e-12)


def test_zero_total_cannot_sample():
    table = EventTable(3)
    with pytest.raises(ValueError):
        table.sample(0.0)


def test_rebuild_length_mismatch():
    with pytest.raises(ValueError):
        EventTable(3).rebuild([1.0, 2.0])


def test_needs_a_channel():
    with pytest.raises(ValueError):
        EventTable(0)


def test_streams_are_keyed():
    a = EventStream(7, 0)
    b = EventStream(7, 0)
    c = EventStream(7, 1)
    first = [a.next_pair() for _ in range(5)]
    assert first == [b.next_pair() for _ in range(5)]
    assert first != [c.next_pair() for _ in range(5)]
    assert a.draws == 5


def test_stream_crosses_batches():
    small = EventStream(11, 3, batch_size=4)
    large = EventStream(11, 3, batch_size=4)
    pairs = [small.next_pair() for _ in range(10)]
    assert pairs == [large.next_pair() for _ in range(10)]
    assert all(e > 0 and 0 <= u < 1 for e, u in pairs)


def test_generator_independent_of_call_order():
    x = make_generator(5, 2).random(3)
    make_generator(5, 1).random(10)
    assert np.array_equal(x, make_generator(5, 2).random(3))
