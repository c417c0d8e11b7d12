"""Tests for chunked execution and fixed-shape reductions"""

import numpy as np
import pytest

from quadricrl.parallel import chunk_bounds, chunked_map, pairwise_sum, resolve_workers


def test_chunk_bounds_cover_range():
    assert chunk_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]
    assert chunk_bounds(0, 4) == []
    with pytest.raises(ValueError):
        chunk_bounds(5, 0)


def test_results_keep_input_order():
    items = list(range(20))
    assert chunked_map(lambda x: x * x, items, workers=4) == [x * x for x in items]


def test_serial_and_threaded_runs_agree():
    items = [np.arange(k, dtype=float) for k in range(1, 9)]
    serial = chunked_map(np.sum, items, workers=1)
    threaded = chunked_map(np.sum, items, workers=3)
    assert serial == threaded


def test_pairwise_sum_is_order_stable(rng):
    """Test that the reduction tree depends on the length only"""
    values = list(rng.standard_normal(37) * 1e8)
    assert pairwise_sum(values) == pairwise_sum(list(values))
    assert float(pairwise_sum(values)) == pytest.approx(sum(values), rel=1e-12)
    logs = np.log(np.arange(1, 6, dtype=float))
    assert float(pairwise_sum(list(logs), np.logaddexp)) == pytest.approx(np.log(15.0))
    with pytest.raises(ValueError):
        pairwise_sum([])


def test_resolve_workers():
    assert resolve_workers(3) == 3
    assert resolve_workers(None) >= 1
