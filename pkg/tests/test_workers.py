"""Tests for task fan-out and seed streams."""

import numpy as np
import pytest

from partkrige.rng import derive_seed, seed_sequence, stream
from partkrige.workers import map_tasks


def square(x):
    return x * x


def explode(x):
    if x == 2:
        raise ValueError("two is not allowed")
    return x


def test_inline_map_keeps_order():
    outcomes = map_tasks(square, [3, 1, 2])
    assert [o.result for o in outcomes] == [9, 1, 4]
    assert [o.index for o in outcomes] == [0, 1, 2]
    assert all(o.ok for o in outcomes)


def test_failures_come_back_as_tracebacks():
    outcomes = map_tasks(explode, [1, 2, 3])
    assert [o.ok for o in outcomes] == [True, False, True]
    assert "two is not allowed" in outcomes[1].error
    assert outcomes[1].result is None


def test_progress_callback():
    seen = []
    map_tasks(square, range(4), progress_cb=lambda done, total: seen.append((done, total)))
    assert seen == [(1, 4), (2, 4), (3, 4), (4, 4)]


def test_process_pool_matches_inline():
    inline = map_tasks(explode, range(5))
    pooled = map_tasks(explode, range(5), jobs=2)
    assert [o.result for o in pooled] == [o.result for o in inline]
    assert [o.ok for o in pooled] == [o.ok for o in inline]


def test_empty_task_list():
    assert map_tasks(square, []) == []


def test_streams_are_reproducible_and_distinct():
    a = stream(7, "chain", 1).standard_normal(5)
    np.testing.assert_array_equal(a, stream(7, "chain", 1).standard_normal(5))
    assert not np.array_equal(a, stream(7, "chain", 2).standard_normal(5))
    assert not np.array_equal(a, stream(8, "chain", 1).standard_normal(5))


def test_string_and_large_keys():
    assert seed_sequence(0, "fold").spawn_key != seed_sequence(0, "kfold").spawn_key
    stream(0, 2**40).random()


def test_derive_seed():
    s = derive_seed(3, "fold", "nsgp", "kfold", 1)
    assert 0 <= s < 2**64
    assert s == derive_seed(3, "fold", "nsgp", "kfold", 1)
    assert s != derive_seed(3, "fold", "nsgp", "kfold", 2)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(ValueError):
        stream(seed)
