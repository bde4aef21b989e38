import numpy as np
import pytest
from pydantic import ValidationError

from msrd.schemas.network import ScalingParams
from msrd.schemas.run import MartingaleStat, PairSummary, ReplicaResult, SchedulePair, SweepPlan
from msrd.services.grid import PairField, project_pn
from msrd.services.limit import limit_error, solve_discrete_limit
from msrd.services.lln import (
    SupErrorObserver,
    lln_sweep,
    martingale_checks,
    martingale_statistics,
    martingale_suite,
    run_ensemble,
    summarize_pair,
    sweep_checks,
)
from msrd.services.ssa import StopRule, truncated_simulate


def _pairs(*points):
    return [SchedulePair(n_sites=n, mu=mu) for n, mu in points]


def _summary(median, exceedance, decomposition=None):
    return PairSummary(
        n_sites=8, mu=32, replicas=10, failures=0, median_error=median,
        exceedance=exceedance, decomposition_ok=decomposition,
    )


class TestSweepPlan:
    def test_decreasing_schedule(self):
        plan = SweepPlan(pairs=_pairs((8, 32), (16, 64), (32, 128)))
        assert len(plan.pairs) == 3

    def test_rejects_increasing_ratio(self):
        with pytest.raises(ValidationError, match="must strictly decrease"):
            SweepPlan(pairs=_pairs((16, 64), (8, 32)))

    def test_rejects_coarse_sampling(self):
        with pytest.raises(ValidationError):
            SweepPlan(pairs=_pairs((8, 32)), sample_points=50)


class TestStatistics:
    def test_z_scores(self):
        stats = martingale_statistics([{"Z_C": [1.0, 0.0]}, {"Z_C": [3.0, 0.0]}])
        assert [s.component for s in stats] == [0, 1]
        assert stats[0].mean == pytest.approx(2.0)
        assert stats[0].std_error == pytest.approx(1.0)
        assert stats[0].z == pytest.approx(2.0)
        assert stats[1].z == 0.0
        assert all(s.samples == 2 and s.failures == 0 for s in stats)

    def test_failures_are_reported(self):
        stats = martingale_statistics([{"Mg1": [0.5]}, {"Mg1": [1.5]}, {"Mg1": [1.0]}], failures=4)
        assert stats[0].samples == 3
        assert stats[0].failures == 4

    def test_no_samples(self):
        assert martingale_statistics([]) == []

    def test_checks_use_worst_component(self):
        stats = [
            MartingaleStat(identity="Mg1", component=0, mean=0.1, std_error=0.1, z=1.0),
            MartingaleStat(identity="Mg1", component=1, mean=-0.5, std_error=0.1, z=-5.0),
            MartingaleStat(identity="Z_C", component=0, mean=0.0, std_error=0.1, z=0.5),
        ]
        checks = {c.name: c for c in martingale_checks(stats, threshold=4.0)}
        assert not checks["martingale_Mg1"].passed
        assert checks["martingale_Mg1"].value == 5.0
        assert checks["martingale_Z_C"].passed


class TestSummaries:
    def test_summarize_pair(self):
        results = [
            ReplicaResult(index=0, seed=1, sup_error=0.1, sup_error_ref=0.12, tau=None),
            ReplicaResult(index=1, seed=1, sup_error=0.2, sup_error_ref=0.21, tau=0.4),
            ReplicaResult(index=2, seed=1, sup_error=0.3, sup_error_ref=0.3, tau=None),
            ReplicaResult(index=3, seed=1, success=False, error="EventCapExceeded: cap"),
        ]
        summary = summarize_pair(ScalingParams(n_sites=8, mu=32), results, [0.15, 0.5], t_end=1.0,
                                 limit_err=0.05, with_tau=True)
        assert summary.replicas == 4
        assert summary.failures == 1
        assert summary.median_error == pytest.approx(0.2)
        assert summary.exceedance == {"0.15": pytest.approx(2 / 3), "0.5": 0.0}
        assert summary.tau_fraction == pytest.approx(1 / 3)
        assert summary.decomposition_ok is True
        assert set(summary.quantiles) == {"q10", "q25", "q75", "q90"}

    def test_decomposition_violation(self):
        results = [ReplicaResult(index=0, seed=1, sup_error=0.1, sup_error_ref=0.5)]
        summary = summarize_pair(ScalingParams(n_sites=8, mu=32), results, [0.1], t_end=1.0, limit_err=0.05)
        assert summary.decomposition_ok is False

    def test_all_failed(self):
        results = [ReplicaResult(index=0, seed=1, success=False, error="boom")]
        summary = summarize_pair(ScalingParams(n_sites=8, mu=32), results, [0.1], t_end=1.0)
        assert summary.median_error is None
        assert sweep_checks([summary], [0.1])[0].name == "median_available"

    def test_sweep_checks_pass(self):
        pairs = [
            _summary(0.4, {"0.05": 1.0, "0.1": 0.9}, True),
            _summary(0.3, {"0.05": 1.0, "0.1": 0.5}, True),
            _summary(0.1, {"0.05": 0.8, "0.1": 0.2}, True),
        ]
        checks = {c.name: c for c in sweep_checks(pairs, [0.05, 0.1])}
        assert set(checks) == {
            "median_strictly_decreasing", "final_median_halved", "exceedance_0.1_non_increasing", "error_decomposition",
        }
        assert all(c.passed for c in checks.values())

    def test_sweep_checks_fail(self):
        pairs = [_summary(0.3, {"0.1": 0.5}), _summary(0.35, {"0.1": 0.6})]
        checks = {c.name: c for c in sweep_checks(pairs, [0.1])}
        assert not checks["median_strictly_decreasing"].passed
        assert not checks["final_median_halved"].passed
        assert not checks["exceedance_0.1_non_increasing"].passed
        assert "error_decomposition" not in checks


class _DecayingReference:
    """1 + exp(-33 t) cos(2 pi j / 4) on C, the exact mean flow of birth-death plus diffusion at N = 4"""

    def __init__(self, times):
        self.times = times
        self.t_end = float(times[-1])
        self.mode = np.cos(2.0 * np.pi * np.arange(4) / 4)

    def at(self, t):
        return 1.0 + np.exp(-33.0 * t) * self.mode, np.zeros(4)


class TestSupErrorObserver:
    def test_deterministic_continuation_is_scored_on_the_grid(self, linear_c_spec):
        times = np.linspace(0.0, 1.0, 11)
        reference = _DecayingReference(times)
        ref_c = np.stack([reference.at(t)[0] for t in times])
        ref_d = np.zeros_like(ref_c)
        observer = SupErrorObserver(times, ref_c, ref_d)
        start_c, _ = reference.at(0.0)
        trajectory = truncated_simulate(
            linear_c_spec,
            ScalingParams(n_sites=4, mu=50),
            PairField.from_arrays(start_c + 1e-3, np.zeros(4)),
            StopRule(t_end=1.0, epsilon0=1e-6, reference=reference),
            sample_times=times,
            seed=2,
            observer=observer,
        )
        assert trajectory.tau == 0.0
        recorded = np.max(np.abs(trajectory.u_c - ref_c), axis=1) + np.max(np.abs(trajectory.u_d - ref_d), axis=1)
        assert observer.worst == pytest.approx(float(recorded.max()), rel=1e-12)
        assert observer.worst < 0.02


class TestEnsembles:
    TIMES = np.linspace(0.0, 0.1, 11)

    @pytest.fixture(scope="class")
    def limits(self, reference_spec):
        v_ref = solve_discrete_limit(reference_spec, 4, t_end=0.1, sample_times=self.TIMES)
        fine = solve_discrete_limit(reference_spec, 8, t_end=0.1, sample_times=self.TIMES)
        return v_ref, fine

    def test_small_ensemble(self, reference_spec, limits):
        v_ref, fine = limits
        scaling = ScalingParams(n_sites=4, mu=16)
        results = run_ensemble(reference_spec, scaling, v_ref, 3, seed=99, fine=fine, epsilon0=0.5)
        assert [r.index for r in results] == [0, 1, 2]
        gap = limit_error(v_ref, fine)
        for result in results:
            assert result.success, result.error
            assert result.sup_error > 0.0
            assert result.sup_error_ref <= result.sup_error + gap + 1e-9
            assert sum(result.events.values()) > 0

    def test_reproducible_and_offset(self, reference_spec, limits):
        v_ref, _ = limits
        scaling = ScalingParams(n_sites=4, mu=16)
        first = run_ensemble(reference_spec, scaling, v_ref, 2, seed=5)
        again = run_ensemble(reference_spec, scaling, v_ref, 2, seed=5)
        shifted = run_ensemble(reference_spec, scaling, v_ref, 2, seed=5, index_offset=1)
        assert [r.sup_error for r in first] == [r.sup_error for r in again]
        assert [r.index for r in shifted] == [1, 2]
        assert shifted[0].sup_error == first[1].sup_error

    def test_lattice_mismatch(self, reference_spec, limits):
        v_ref, _ = limits
        with pytest.raises(ValueError):
            run_ensemble(reference_spec, ScalingParams(n_sites=8, mu=32), v_ref, 1)

    def test_truncation_needs_radius(self, reference_spec, limits):
        v_ref, _ = limits
        with pytest.raises(ValueError):
            run_ensemble(reference_spec, ScalingParams(n_sites=4, mu=16), v_ref, 1, truncate=True)

    def test_martingales_are_mean_zero(self, reference_spec):
        n, mu = 4, 16
        uc = project_pn(reference_spec.initial.v0_c, n, reference_spec.initial.constants).values
        ud = project_pn(reference_spec.initial.v0_d, n, reference_spec.initial.constants).values
        initial = PairField.from_arrays(np.round(uc * mu) / mu, ud)
        stats = martingale_suite(reference_spec, ScalingParams(n_sites=n, mu=mu), 60, t_end=0.25,
                                 seed=17, initial=initial)
        identities = {s.identity for s in stats}
        assert {"Z_C", "Z_D", "Mg1", "Mg2", "Mg3", "Mg4", "Mg5", "Mg6", "Y_C", "reversed_qv"} <= identities
        for check in martingale_checks(stats, threshold=5.0):
            assert check.passed, (check.name, check.value)

    def test_sweep_report(self, reference_spec):
        plan = SweepPlan(pairs=_pairs((2, 8), (4, 32)), replicas=2, t_end=0.1, seed=3,
                         sample_points=200, n_ref=8, epsilon0=0.5)
        report = lln_sweep(plan, reference_spec)
        assert [p.n_sites for p in report.pairs] == [2, 4]
        assert set(report.replicas) == {"2,8", "4,32"}
        assert all(p.tau_fraction is not None for p in report.pairs)
        assert all(p.limit_error is not None for p in report.pairs)
        assert "median_strictly_decreasing" in {c.name for c in report.checks}
