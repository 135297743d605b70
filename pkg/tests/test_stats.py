import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from statebench.results import build_result_table, read_rows
from statebench.stats import (ResultTable, analyze, chi2_sf, friedman,
                              nemenyi_cd, rank_blocks)


def table(scores, names=None):
    scores = np.asarray(scores, dtype=float)
    names = names or [f"t{i}" for i in range(scores.shape[1])]
    blocks = [(f"b{i}",) for i in range(scores.shape[0])]
    return ResultTable(blocks, names, scores)


class TestRanks:
    def test_rank_one_is_largest(self):
        ranks = rank_blocks(np.array([[0.3, 0.1, 0.2]]))
        assert ranks.tolist() == [[1.0, 3.0, 2.0]]

    def test_ties_get_midranks(self):
        ranks = rank_blocks(np.array([[0.5, 0.5, 0.1]]))
        assert ranks.tolist() == [[1.5, 1.5, 3.0]]

    @given(st.integers(2, 8), st.integers(2, 12), st.integers(0, 10_000))
    def test_rows_sum_to_k_choose_formula(self, k, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 4, size=(n, k)).astype(float)  # force ties
        ranks = rank_blocks(scores)
        assert np.allclose(ranks.sum(axis=1), k * (k + 1) / 2)


class TestFriedman:
    def test_all_tied_table(self):
        chi2, p, rbar = friedman(table(np.ones((5, 3))))
        assert chi2 == pytest.approx(0.0)
        assert p == pytest.approx(1.0)
        assert np.allclose(rbar, 2.0)

    def test_textbook_example(self):
        # perfectly consistent ordering across 4 blocks, K=3:
        # mean ranks (1, 2, 3) -> chi2 = 12*4/(3*4) * ((1-2)^2 + 0 + (3-2)^2) = 8
        scores = np.array([[3.0, 2.0, 1.0]] * 4) + np.arange(4)[:, None]
        chi2, p, rbar = friedman(table(scores))
        assert chi2 == pytest.approx(8.0)
        assert rbar.tolist() == [1.0, 2.0, 3.0]
        assert p == pytest.approx(math.exp(-4.0), rel=1e-6)  # df=2 closed form

    @given(st.integers(0, 5000))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.random((6, 4))
        # per-block strictly increasing affine maps preserve within-block order
        a = rng.uniform(0.5, 3.0, size=(6, 1))
        b = rng.normal(size=(6, 1))
        chi2_1, p_1, r_1 = friedman(table(scores))
        chi2_2, p_2, r_2 = friedman(table(a * scores + b))
        assert chi2_1 == pytest.approx(chi2_2)
        assert p_1 == pytest.approx(p_2)
        assert np.allclose(r_1, r_2)

    @given(st.integers(0, 5000))
    def test_column_permutation_permutes_ranks(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.random((5, 4))
        perm = rng.permutation(4)
        chi2_1, _, r_1 = friedman(table(scores))
        chi2_2, _, r_2 = friedman(table(scores[:, perm]))
        assert chi2_1 == pytest.approx(chi2_2)
        assert np.allclose(r_1[perm], r_2)

    def test_table_validation(self):
        with pytest.raises(ValueError, match="2 blocks"):
            table(np.ones((1, 3)))
        with pytest.raises(ValueError, match="2 blocks"):
            table(np.ones((3, 1)))
        with pytest.raises(ValueError, match="non-finite"):
            table([[1.0, np.nan], [0.0, 1.0]])
        with pytest.raises(ValueError, match="shape"):
            ResultTable([("b",)], ["x", "y"], np.ones((2, 2)))


class TestNemenyi:
    def test_published_critical_difference(self):
        assert nemenyi_cd(3, 36, 0.05) == pytest.approx(0.5522, abs=1e-3)

    def test_two_treatment_closed_form(self):
        # q for k=2 is the normal quantile; cd = 1.959964/sqrt(n)
        assert nemenyi_cd(2, 25, 0.05) == pytest.approx(1.959964 / 5.0, rel=1e-6)

    def test_quadrupling_blocks_halves_cd(self):
        assert nemenyi_cd(4, 40, 0.05) == pytest.approx(nemenyi_cd(4, 10, 0.05) / 2)

    def test_alpha_ten_percent_is_tighter(self):
        assert nemenyi_cd(5, 20, 0.10) < nemenyi_cd(5, 20, 0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            nemenyi_cd(3, 36, 0.01)
        with pytest.raises(ValueError):
            nemenyi_cd(1, 36)
        with pytest.raises(ValueError):
            nemenyi_cd(11, 36)
        with pytest.raises(ValueError):
            nemenyi_cd(3, 0)


class TestChi2Sf:
    def test_edge_and_closed_forms(self):
        assert chi2_sf(0.0, 3) == 1.0
        assert chi2_sf(2 * math.log(2), 2) == pytest.approx(0.5, rel=1e-12)
        for x in (0.5, 2.0, 7.3):
            assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-10)
            assert chi2_sf(x, 4) == pytest.approx((1 + x / 2) * math.exp(-x / 2), rel=1e-10)
            assert chi2_sf(x, 1) == pytest.approx(math.erfc(math.sqrt(x / 2)), rel=1e-10)

    def test_against_high_precision_oracle(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 30
        for df in (1, 2, 3, 5, 8, 13, 20):
            for x in (0.01, 0.3, 1.0, 2.5, 4.0, 9.0, 16.26, 30.0, 55.0):
                want = float(mp.gammainc(df / 2, x / 2, mp.inf, regularized=True))
                assert chi2_sf(x, df) == pytest.approx(want, abs=1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            chi2_sf(-1.0, 2)
        with pytest.raises(ValueError):
            chi2_sf(1.0, 0)


class TestAnalyze:
    def test_flags_follow_cd(self):
        # ranks come out exactly (1, 2, 3); cd(3, 12) ~ 0.957
        scores = np.array([[3.0, 2.0, 1.0]] * 12)
        report = analyze(table(scores, ["a", "b", "c"]), alpha=0.05)
        assert report.cd == pytest.approx(2.343701 * math.sqrt(12 / (6 * 12)), rel=1e-6)
        assert report.significant[("a", "b")] is True    # gap 1.0 > 0.957
        assert report.significant[("a", "c")] is True    # gap 2.0
        assert report.significant[("b", "c")] is True

    def test_report_fields(self):
        rng = np.random.default_rng(0)
        report = analyze(table(rng.random((6, 3))), alpha=0.10)
        assert report.n_blocks == 6
        assert report.alpha == 0.10
        assert set(report.significant) == {("t0", "t1"), ("t0", "t2"), ("t1", "t2")}
        assert sum(report.mean_ranks.values()) == pytest.approx(6.0)


@pytest.fixture(scope="module")
def rows():
    from statebench.cli import paper_fixture_path
    return read_rows(paper_fixture_path())


class TestFixtureReproduction:
    """The checked-in published-results fixture reproduces the reported stats."""

    def test_fixture_shape(self, rows):
        assert len(rows) == 108
        assert {r["state"] for r in rows} == {"user", "item_mean", "item_concat"}
        assert {r["embedding"] for r in rows} == {"als", "bpr"}

    def test_three_way_state_comparison(self, rows):
        t = build_result_table(rows, "state", ["dataset", "embedding", "policy"], "ndcg")
        assert t.scores.shape == (36, 3)
        chi2, p, rbar = friedman(t)
        assert chi2 == pytest.approx(16.26, abs=0.05)
        assert p == pytest.approx(0.00029, abs=0.0002)

    def test_two_way_embedding_comparison(self, rows):
        t = build_result_table(rows, "embedding", ["dataset", "state", "policy"], "ndcg")
        assert t.scores.shape == (54, 2)
        chi2, p, _ = friedman(t)
        assert chi2 == pytest.approx(2.67, abs=0.05)
        assert p == pytest.approx(0.102, abs=0.005)

    def test_dynamic_states_beat_static_at_cd(self, rows):
        t = build_result_table(rows, "state", ["dataset", "embedding", "policy"], "ndcg")
        report = analyze(t, alpha=0.05)
        ranks = report.mean_ranks
        assert ranks["user"] > ranks["item_mean"]
        assert ranks["user"] > ranks["item_concat"]
        assert report.significant[("item_mean", "user")] is True
        assert report.significant[("item_concat", "user")] is True
        assert report.significant[("item_mean", "item_concat")] is False
