import math

import numpy as np
import pytest

from conftest import flow
from tcpslice.numopt import PriceVector
from tcpslice.rem import (
    MarkEstimator,
    end_to_end_mark_prob,
    estimate_price_sum,
    marking_probability,
    price_from_fraction,
)

TWO_HOP = flow("s", ["a", "b"])


def prices(p_minus=0.0, edges=None):
    return PriceVector(dict(edges or {}), {"s": 0.0, "other": p_minus})


def test_marking_probability():
    assert marking_probability(TWO_HOP, "a", prices()) == 0.0
    got = marking_probability(TWO_HOP, "a", prices(0.4288, {"a": 0.1}))
    assert got == pytest.approx(1 - math.exp(-0.3144), rel=1e-14)
    assert got == pytest.approx(0.2698, abs=1e-4)
    assert marking_probability(TWO_HOP, "a", prices(0.0, {"a": 30.0})) < 1.0  # 1 - e^-30 still resolvable in doubles
    with pytest.raises(ValueError):
        marking_probability(TWO_HOP, "zz", prices())


def test_end_to_end():
    assert end_to_end_mark_prob(TWO_HOP, prices()) == 0.0
    p = prices(0.4288, {"a": 0.1, "b": 0.1})
    assert end_to_end_mark_prob(TWO_HOP, p) == pytest.approx(0.4668, abs=1e-4)
    one = flow("s", ["a"])
    p = prices(0.3, {"a": 0.2})
    assert end_to_end_mark_prob(one, p) == marking_probability(one, "a", p)


def test_estimate_price_sum_examples():
    est = MarkEstimator(window=1)
    est.add_interval(0, 100)
    assert estimate_price_sum(est) == 0.0
    est.add_interval(4668, 10000)
    assert estimate_price_sum(est) == pytest.approx(-math.log(0.5332), rel=1e-12)
    assert estimate_price_sum(est) == pytest.approx(0.6288, abs=1e-4)
    est.add_interval(100, 100)
    assert estimate_price_sum(est) == pytest.approx(math.log(101), rel=1e-12)


def test_no_information_keeps_last_estimate():
    est = MarkEstimator(window=3)
    est.reset(0.7)
    assert est.update() == 0.7
    est.add_interval(0, 0)
    assert est.update() == 0.7


def test_window_slides_and_cumulative_accumulates():
    w = MarkEstimator(window=2)
    c = MarkEstimator(cumulative=True)
    for m, t in [(10, 10), (0, 10), (0, 10)]:
        w.add_interval(m, t)
        c.add_interval(m, t)
    assert (w.window_marked, w.window_total) == (0, 20)
    assert (c.window_marked, c.window_total) == (10, 30)


def test_seeded_reset_reproduces_price():
    est = MarkEstimator(window=20)
    est.reset(0.25, pseudo_total=400)
    assert est.update() == pytest.approx(0.25, rel=1e-12)


def test_price_from_fraction_clamp():
    assert price_from_fraction(5, 5) == pytest.approx(math.log(6))


def test_statistical_consistency():
    """Delta-method band holds in at least 99% of seeded trials."""
    rng = np.random.default_rng(2024)
    n, inside, trials = 2000, 0, 500
    for _ in range(trials):
        q = rng.uniform(0.01, 2.0)
        p = -math.expm1(-q)
        marked = int(rng.binomial(n, p))
        est = price_from_fraction(marked, n)
        band = 3 * math.sqrt(p * (1 - p) / n) / (1 - p)
        inside += abs(est - q) <= band
    assert inside >= 0.99 * trials
