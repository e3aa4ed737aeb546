import numpy as np
import pytest
from hypothesis import given, strategies as st

from scbandit.core import (DecisionRecord, Provenance, derive_seed, make_rng,
                           noncontextual_fraction, normalized_cumulative_regret, regret_curve)

C, N, A = Provenance.CONTEXTUAL, Provenance.NONCONTEXTUAL, Provenance.AGREEMENT


def rec(prov, t=0):
    if prov is A:
        return DecisionRecord(t, 1, 1, 0.5, 0.5, 1, A)
    final = 0 if prov is C else 1
    return DecisionRecord(t, 0, 1, 0.6, 0.4, final, prov)


class TestRegret:
    @pytest.mark.parametrize("rewards, expected", [
        ([1, 0, 1, 0], 0.5),
        ([1, 1, 1], 0.0),
        ([0] * 7 + [1] * 3, 0.7),
    ])
    def test_examples(self, rewards, expected):
        assert normalized_cumulative_regret(rewards) == pytest.approx(expected)

    def test_empty_is_an_error(self):
        with pytest.raises(ValueError):
            normalized_cumulative_regret([])

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            normalized_cumulative_regret([0.5])

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
    def test_curve_properties(self, rewards):
        curve = regret_curve(rewards)
        assert np.all((curve >= 0) & (curve <= 1))
        n = np.arange(1, len(rewards) + 1)
        assert np.all(np.abs(np.diff(curve)) <= 1.0 / n[1:] + 1e-12)
        # one minus the running mean reward
        np.testing.assert_allclose(curve, 1 - np.cumsum(rewards) / n)
        assert curve[-1] == pytest.approx(normalized_cumulative_regret(rewards))


class TestNoncontextualFraction:
    def test_examples(self):
        assert noncontextual_fraction([rec(C), rec(N), rec(A), rec(C)]) == 0.25
        assert noncontextual_fraction([rec(A)] * 5) == 0.0
        assert noncontextual_fraction([rec(N), rec(N), rec(C), rec(N)]) == 0.75

    def test_empty_is_an_error(self):
        with pytest.raises(ValueError):
            noncontextual_fraction([])


class TestDecisionRecord:
    def test_agreement_iff_same_candidates(self):
        with pytest.raises(ValueError):
            DecisionRecord(0, 1, 1, 0.5, 0.5, 1, C)
        with pytest.raises(ValueError):
            DecisionRecord(0, 0, 1, 0.5, 0.5, 0, A)

    def test_final_arm_is_a_candidate(self):
        with pytest.raises(ValueError):
            DecisionRecord(0, 0, 1, 0.5, 0.5, 2, C)

    def test_csv_round_trip(self):
        r = DecisionRecord(7, 2, 0, 0.1 + 0.2, 1 / 3, 0, N)
        assert r.to_row()[0] == "7"
        assert DecisionRecord.from_row(r.to_row()) == r


class TestRng:
    def test_equal_seeds_equal_bytes(self):
        a = make_rng(123).random(100)
        b = make_rng(123).random(100)
        assert a.tobytes() == b.tobytes()

    def test_derived_seeds_are_stable_and_distinct(self):
        assert derive_seed(5, "run", 0) == derive_seed(5, "run", 0)
        assert len({derive_seed(5, "run", r) for r in range(100)}) == 100
        assert derive_seed(5, "run", 0) != derive_seed(6, "run", 0)
        assert 0 <= derive_seed(2**70, "x") < 2**64
