import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iupm import (
    DilutionLevelData,
    ExtremeOutcome,
    MultiDilutionAssay,
    classify_extreme,
    closed_form_full_udsa,
    closed_form_no_udsa,
)
from iupm.optimize import maximize_box
from iupm.poisson import gradient, hessian, log_likelihood
from helpers import decimal_log_likelihood, fd_gradient, fd_hessian_of_gradient, random_level


def level(M, M_N, m, Y, u=1.0):
    return DilutionLevelData(u=u, M=M, M_N=M_N, m=m, Y=tuple(Y))


class TestLogLikelihood:
    def test_matches_high_precision_evaluation(self):
        lv = level(12, 6, 4, (3, 2))
        lam = np.array([0.1, 0.2])
        assert log_likelihood(lam, lv) == pytest.approx(
            decimal_log_likelihood(lam, lv), rel=1e-13
        )

    def test_no_sequencing_reduces_to_total_rate_form(self):
        lv = level(12, 6, 0, (0, 0, 0))
        lam = np.array([0.2, 0.3, 0.1])
        total = lam.sum()
        expected = (12 - 6) * math.log(1 - math.exp(-total)) - 6 * total
        assert log_likelihood(lam, lv) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(min_value=0, max_value=10**6))
    def test_joint_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        lv = random_level(rng)
        lam = rng.uniform(0.05, 1.0, lv.n)
        perm = rng.permutation(lv.n)
        lv_perm = level(lv.M, lv.M_N, lv.m, tuple(lv.Y[i] for i in perm))
        assert log_likelihood(lam, lv) == pytest.approx(
            log_likelihood(lam[perm], lv_perm), rel=1e-12
        )

    def test_zero_rate_with_counts_is_minus_inf(self):
        lv = level(12, 6, 3, (2, 1))
        assert log_likelihood([0.0, 0.5], lv) == -math.inf

    def test_zero_rate_with_zero_count_contributes_nothing(self):
        lv = level(12, 6, 3, (3, 0))
        with_zero = log_likelihood([0.4, 0.0], lv)
        reduced = log_likelihood([0.4], level(12, 6, 3, (3,)))
        assert with_zero == pytest.approx(reduced, rel=1e-12)


class TestDerivatives:
    def test_gradient_zero_at_full_sequencing_mle(self):
        lv = level(12, 5, 7, (4, 3))
        lam = -np.log1p(-np.array([4, 3]) / 12)
        np.testing.assert_allclose(gradient(lam, lv), 0.0, atol=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1234)
        for _ in range(60):
            lv = random_level(rng)
            lam = rng.uniform(0.05, 1.0, lv.n)
            fd = fd_gradient(lambda v: log_likelihood(v, lv), lam)
            ana = gradient(lam, lv)
            np.testing.assert_allclose(ana, fd, rtol=1e-6, atol=1e-6)

    def test_exchangeable_components_share_gradient(self):
        lv = level(20, 8, 6, (4, 4))
        g = gradient([0.33, 0.33], lv)
        assert g[0] == pytest.approx(g[1], rel=1e-14)

    def test_hessian_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        for _ in range(40):
            lv = random_level(rng)
            lam = rng.uniform(0.05, 1.0, lv.n)
            fd = fd_hessian_of_gradient(lambda v: gradient(v, lv), lam)
            np.testing.assert_allclose(hessian(lam, lv), fd, rtol=1e-5, atol=1e-5)

    def test_hessian_negative_definite_with_counts_everywhere(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 200:
            lv = random_level(rng, require_detected=True)
            lam = rng.uniform(0.05, 1.5, lv.n)
            eigs = np.linalg.eigvalsh(hessian(lam, lv))
            assert np.all(eigs < 0.0)
            checked += 1

    def test_hessian_diagonal_at_full_sequencing(self):
        lv = level(10, 4, 6, (5, 3))
        H = hessian([0.5, 0.4], lv)
        assert H[0, 1] == 0.0 and H[1, 0] == 0.0

    def test_concavity_on_random_inputs(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            lv = random_level(rng)
            lam = rng.uniform(0.02, 2.0, lv.n)
            eigs = np.linalg.eigvalsh(hessian(lam, lv))
            assert np.all(eigs <= 1e-10)


class TestClosedForms:
    @pytest.mark.parametrize(
        "M,M_N,expected",
        [(12, 6, math.log(2)), (24, 8, math.log(3)), (36, 36, 0.0)],
    )
    def test_no_sequencing(self, M, M_N, expected):
        assert closed_form_no_udsa(M, M_N) == pytest.approx(expected, abs=1e-12)

    def test_no_sequencing_divergent_case(self):
        assert closed_form_no_udsa(10, 0) == math.inf

    def test_full_sequencing_values(self):
        np.testing.assert_allclose(
            closed_form_full_udsa(10, (2, 5)),
            [-math.log1p(-0.2), -math.log1p(-0.5)],
            rtol=1e-12,
        )
        assert closed_form_full_udsa(32, (1,))[0] == pytest.approx(0.0317486983, abs=1e-9)

    def test_full_sequencing_divergent_component(self):
        out = closed_form_full_udsa(4, (4,))
        assert out[0] == math.inf


class TestClassifyExtreme:
    def test_all_negative(self):
        lv = level(12, 12, 0, ())
        assay = MultiDilutionAssay((lv,), 0)
        assert classify_extreme(assay) is ExtremeOutcome.ALL_NEGATIVE

    def test_all_positive_single_lineage(self):
        lv = level(6, 0, 6, (6,))
        assay = MultiDilutionAssay((lv,), 1)
        assert classify_extreme(assay) is ExtremeOutcome.ALL_POSITIVE_SINGLE_DVL

    def test_all_positive_no_sequencing(self):
        lv = level(6, 0, 0, ())
        assay = MultiDilutionAssay((lv,), 0)
        assert classify_extreme(assay) is ExtremeOutcome.ALL_POSITIVE_SINGLE_DVL

    def test_negatives_at_other_levels_keep_it_regular(self):
        # an all-positive level is fine as long as some level has negatives
        levels = (
            level(18, 0, 0, (0, 0, 0), u=2.5),
            level(6, 3, 3, (2, 1, 1), u=0.5),
            level(6, 5, 1, (1, 0, 0), u=0.1),
        )
        assay = MultiDilutionAssay(levels, 3)
        assert classify_extreme(assay) is ExtremeOutcome.REGULAR

    def test_shared_lineage_across_levels_detected(self):
        levels = (
            level(4, 0, 4, (4, 2), u=1.0),
            level(4, 0, 2, (2, 1), u=0.5),
        )
        assay = MultiDilutionAssay(levels, 2)
        assert classify_extreme(assay) is ExtremeOutcome.ALL_POSITIVE_SINGLE_DVL


class TestAugmentedLikelihood:
    @settings(max_examples=10)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_zero_count_lineage_gets_zero_rate(self, seed):
        # appending an undetected lineage and maximizing over n+1 bounded
        # rates must leave the total unchanged with the new rate at zero
        rng = np.random.default_rng(seed)
        lv = random_level(rng, require_detected=True)
        augmented = level(lv.M, lv.M_N, lv.m, tuple(lv.Y) + (0,))

        def f(lam):
            return log_likelihood(lam, augmented)

        def g(lam):
            return gradient(lam, augmented)

        base = maximize_box(
            lambda lam: log_likelihood(lam, lv),
            lambda lam: gradient(lam, lv),
            np.full(lv.n, 0.2),
            np.zeros(lv.n),
        )
        res = maximize_box(f, g, np.full(lv.n + 1, 0.2), np.zeros(lv.n + 1))
        assert res.x[-1] <= 1e-6
        assert abs(res.x.sum() - base.x.sum()) < 1e-6
