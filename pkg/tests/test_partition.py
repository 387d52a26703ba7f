"""Parameter partition, consistency report, and estimating-function identities."""

import json

import numpy as np
import pytest

import crmkit as ck
from crmkit.errors import FeasibilityError
from crmkit.partition import dose_level_estimating_function, score_term

from conftest import ILLUSTRATION_TRUTH, TARGET


def bisect_oracle(f, lo, hi, tol=1e-12):
    f_lo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        if (f(mid) > 0) == (f_lo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestComputePartition:
    def test_illustration_first_split(self, model_direct):
        part = ck.compute_partition(model_direct, TARGET, model_direct.param_bounds)
        oracle = bisect_oracle(lambda a: 0.04 ** a + 0.07 ** a - 0.4, 1e-4, 1e4)
        assert part.kappas[1] == pytest.approx(oracle, abs=1e-9)
        assert part.kappas[1] == pytest.approx(0.552, abs=1e-3)

    def test_strictly_increasing(self, model_direct):
        part = ck.compute_partition(model_direct, TARGET, model_direct.param_bounds)
        ks = part.kappas
        assert all(b > a for a, b in zip(ks[:-1], ks[1:]))
        assert len(ks) == model_direct.k + 1

    def test_two_dose_partition_counts(self):
        model = ck.WorkingModel(ck.POWER_DIRECT, ck.Skeleton.from_alpha([0.1, 0.3]))
        part = ck.compute_partition(model, 0.2, model.param_bounds)
        assert len(part.intervals) == 2
        assert part.intervals[0][0] == model.param_bounds[0]
        assert part.intervals[1][1] == model.param_bounds[1]

    def test_symmetric_crossing_is_split_point(self):
        # with prob(d1,kappa) = prob(d2,kappa) = theta the split point solves both
        model = ck.WorkingModel(ck.POWER_DIRECT, ck.Skeleton.from_alpha([0.04, 0.07]))
        kappa = bisect_oracle(lambda a: 0.04 ** a + 0.07 ** a - 0.4, 1e-4, 1e4)
        theta_star = 0.5 * (model.prob_tox(1, kappa) + model.prob_tox(2, kappa))
        part = ck.compute_partition(model, theta_star, model.param_bounds)
        assert part.kappas[1] == pytest.approx(kappa, abs=1e-8)

    def test_feasibility_error_names_dose(self, model_direct):
        with pytest.raises(FeasibilityError, match="dose 1"):
            ck.compute_partition(model_direct, TARGET, (0.5, 0.9))

    def test_feasibility_exactness(self, model_direct):
        # error raised exactly when prob(B) < theta < prob(A) fails at a dose
        ck.compute_partition(model_direct, TARGET, (1e-3, 1e3))
        bad_hi = model_direct.solve_param(6, 0.25)  # prob(d6, B) > theta
        with pytest.raises(FeasibilityError, match="dose 6"):
            ck.compute_partition(model_direct, TARGET, (1e-3, bad_hi))

    def test_interval_index_half_open(self, model_direct):
        part = ck.compute_partition(model_direct, TARGET, model_direct.param_bounds)
        k1 = part.kappas[1]
        assert part.interval_index(k1 - 1e-9) == 1
        assert part.interval_index(k1) == 2  # boundary joins the upper interval
        assert part.interval_index(part.bounds[1]) == model_direct.k

    def test_monotone_in_target(self, model_direct):
        # prob decreases in the parameter here, so a higher target moves
        # every split point strictly down; the response is strictly monotone
        parts = [
            ck.compute_partition(model_direct, th, model_direct.param_bounds).kappas[1:-1]
            for th in (0.15, 0.2, 0.25, 0.3)
        ]
        for lower, higher in zip(parts[:-1], parts[1:]):
            assert all(h < l for l, h in zip(lower, higher))

    def test_allocation_agreement(self, model_direct):
        part = ck.compute_partition(model_direct, TARGET, model_direct.param_bounds)
        rng = np.random.default_rng(5)
        for _ in range(500):
            a = float(rng.uniform(0.05, 5.0))
            curve = model_direct.prob_tox_curve(a)
            closest = int(np.argmin(np.abs(curve - TARGET))) + 1
            assert closest == part.interval_index(a)

    def test_emitters(self, model_direct):
        part = ck.compute_partition(model_direct, TARGET, model_direct.param_bounds)
        doc = json.loads(part.to_json())
        assert len(doc["intervals"]) == 6
        assert doc["kappas"][1] == pytest.approx(part.kappas[1])
        tsv = part.to_tsv()
        assert tsv.splitlines()[0] == "dose_index\tlower\tupper"
        assert len(tsv.splitlines()) == 7


class TestCheckConsistency:
    def test_exact_skeleton_all_members(self):
        model = ck.WorkingModel(ck.POWER_DIRECT, ck.Skeleton.from_alpha(ILLUSTRATION_TRUTH))
        rep = ck.check_consistency(model, ILLUSTRATION_TRUTH, TARGET)
        assert rep.all_members
        assert all(a == pytest.approx(1.0, abs=1e-12) for a in rep.a_constants)

    def test_illustration_identifies_level_two(self, model_direct):
        rep = ck.check_consistency(model_direct, ILLUSTRATION_TRUTH, TARGET)
        assert rep.d0 == 2
        assert rep.theta0 == pytest.approx(0.22)
        assert rep.s_set[0] < rep.a0 < rep.s_set[1]  # a0 always belongs

    def test_membership_matches_grid_scan(self, model_direct):
        rep = ck.check_consistency(model_direct, ILLUSTRATION_TRUTH, TARGET)
        grid = np.linspace(1e-3, 6.0, 100_000)
        curves = np.stack([model_direct.prob_tox(i, grid) for i in range(1, 7)])
        closest = np.argmin(np.abs(curves - TARGET), axis=0) + 1
        for i, a_i in enumerate(rep.a_constants):
            j = int(np.searchsorted(grid, a_i))
            scan_says = closest[min(j, len(grid) - 1)] == rep.d0
            assert rep.members_in_set[i] == scan_says

    def test_accepts_scenario_object(self, model_direct):
        sc = ck.Scenario(true_tox=ILLUSTRATION_TRUTH, n=16)
        rep = ck.check_consistency(model_direct, sc, TARGET)
        assert rep.d0 == 2

    def test_tie_goes_to_lower_and_flagged(self, model_direct):
        # 0.25 and 0.75 are exactly equidistant from 0.5 in binary floats
        rep = ck.check_consistency(
            model_direct, (0.1, 0.25, 0.75, 0.8, 0.85, 0.9), 0.5
        )
        assert rep.d0 == 2  # lower of the equidistant pair wins
        assert rep.tie_flag

    def test_rejects_invalid_truth(self, model_direct):
        with pytest.raises(ValueError):
            ck.check_consistency(model_direct, (0.1, 0.1, 0.3, 0.4, 0.5, 0.6), TARGET)
        with pytest.raises(ValueError):
            ck.check_consistency(model_direct, (0.0, 0.2, 0.3, 0.4, 0.5, 0.6), TARGET)


class TestEstimatingFunction:
    def test_zero_at_mle(self, model_direct, history9):
        a = ck.mle(model_direct, history9)
        assert abs(ck.estimating_function(model_direct, history9, a)) < 1e-8

    def test_single_record_reduction(self, model_direct):
        h = ck.TrialHistory.from_pairs([(3, 1)])
        a = 0.8
        assert ck.estimating_function(model_direct, h, a) == pytest.approx(
            score_term(model_direct, 1.0, 3, a), rel=1e-12
        )

    def test_dose_level_rewrite_identity(self, model_direct):
        # replacing outcomes by their per-dose rates equates the two forms
        rng = np.random.default_rng(13)
        for _ in range(20):
            k = model_direct.k
            counts = rng.integers(0, 6, size=k)
            while counts.sum() == 0:
                counts = rng.integers(0, 6, size=k)
            rates = rng.uniform(0.05, 0.95, size=k)
            a = float(rng.uniform(0.2, 2.0))
            n = counts.sum()
            patient_sum = 0.0
            for i in range(k):
                patient_sum += counts[i] * score_term(model_direct, float(rates[i]), i + 1, a)
            patient_sum /= n
            freq = counts / n
            dose_form = dose_level_estimating_function(model_direct, freq, rates, a)
            assert dose_form == pytest.approx(patient_sum, abs=1e-12)
