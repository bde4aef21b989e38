"""Ensembles, convergence sweeps and the martingale suite"""
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from msrd.config import settings
from msrd.schemas.network import NetworkSpec, ScalingParams
from msrd.schemas.run import (
    CheckResult,
    ExperimentReport,
    MartingaleStat,
    PairSummary,
    ReplicaResult,
    SweepPlan,
)
from msrd.services.grid import PairField, project_pn
from msrd.services.limit import LimitSolution, block_average_rows, limit_error, solve_discrete_limit
from msrd.services.run_logger import run_logger
from msrd.services.ssa import (
    EventCapExceeded,
    EventRecord,
    PositivityViolation,
    RateOverflow,
    StopRule,
    TrajectoryObserver,
    simulate,
    truncated_simulate,
)

DECOMPOSITION_SLACK = 1e-9
QUANTILES = (0.1, 0.25, 0.75, 0.9)


class SupErrorObserver(TrajectoryObserver):
    """
    Exact running sup of ||u(t) - v(t)||_{inf,inf} against a grid-sampled reference.

    The reference is held constant on each grid interval. Between a grid time
    and the next slow event only u_C changes, one or two sites at a time, so
    the sup over the interval is the running maximum of the per-site C
    deviations plus the (constant) D deviation.
    """

    def __init__(
        self,
        times: np.ndarray,
        ref_c: np.ndarray,
        ref_d: np.ndarray,
        epsilon0: Optional[float] = None,
    ):
        self.times = np.asarray(times, dtype=float)
        self.ref_c = np.asarray(ref_c, dtype=float)
        self.ref_d = np.asarray(ref_d, dtype=float)
        self.epsilon0 = epsilon0
        self.k = 0
        self.worst = 0.0
        self.tau: Optional[float] = None
        self._seg_c = 0.0
        self._sup_d = 0.0

    def _reset(self, t: float, uc: np.ndarray, ud: np.ndarray):
        self._seg_c = float(np.max(np.abs(uc - self.ref_c[self.k])))
        self._sup_d = float(np.max(np.abs(ud - self.ref_d[self.k])))
        self._update(t, self._seg_c + self._sup_d)

    def _update(self, t: float, value: float):
        if value > self.worst:
            self.worst = value
            if self.tau is None and self.epsilon0 is not None and value > self.epsilon0:
                self.tau = t

    def start(self, t, uc, ud):
        self.k = max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)
        self._reset(t, uc, ud)

    def advance(self, t, uc, ud):
        times = self.times
        while self.k + 1 < times.size and times[self.k + 1] <= t:
            self.k += 1
            self._reset(float(times[self.k]), uc, ud)

    def jumped(self, event: EventRecord, uc, ud):
        if event.is_slow:
            self._reset(event.time, uc, ud)
            return
        ref = self.ref_c[self.k]
        for site, _ in event.local:
            deviation = abs(uc[site] - ref[site])
            if deviation > self._seg_c:
                self._seg_c = deviation
                self._update(event.time, deviation + self._sup_d)

    def finish(self, t, uc, ud):
        self.advance(t, uc, ud)


class _Observers(TrajectoryObserver):
    def __init__(self, *observers: TrajectoryObserver):
        self.observers = observers

    def start(self, t, uc, ud):
        for o in self.observers:
            o.start(t, uc, ud)

    def advance(self, t, uc, ud):
        for o in self.observers:
            o.advance(t, uc, ud)

    def jumped(self, event, uc, ud):
        for o in self.observers:
            o.jumped(event, uc, ud)

    def finish(self, t, uc, ud):
        for o in self.observers:
            o.finish(t, uc, ud)


# ---------------------------------------------------------------------------
# Replicas
# ---------------------------------------------------------------------------

@dataclass
class ReplicaTask:
    """Immutable unit of ensemble work; picklable for process pools"""
    spec: NetworkSpec
    scaling: ScalingParams
    initial_c: np.ndarray
    initial_d: np.ndarray
    t_end: float
    seed: int
    index: int
    max_events: int
    times: Optional[np.ndarray] = None
    ref_c: Optional[np.ndarray] = None
    ref_d: Optional[np.ndarray] = None
    fine_c: Optional[np.ndarray] = None
    fine_d: Optional[np.ndarray] = None
    epsilon0: Optional[float] = None
    truncation: Optional[LimitSolution] = None
    track_martingales: bool = False


def run_replica(task: ReplicaTask) -> ReplicaResult:
    """Run one trajectory; failures come back as records instead of exceptions"""
    # Must stay at module level for pickling by ProcessPoolExecutor
    observers = []
    primary = fine = None
    if task.times is not None:
        primary = SupErrorObserver(task.times, task.ref_c, task.ref_d, task.epsilon0)
        observers.append(primary)
        if task.fine_c is not None:
            fine = SupErrorObserver(task.times, task.fine_c, task.fine_d)
            observers.append(fine)

    initial = PairField.from_arrays(task.initial_c, task.initial_d)
    try:
        if task.truncation is not None:
            stop = StopRule(t_end=task.t_end, epsilon0=task.epsilon0, max_events=task.max_events,
                            reference=task.truncation)
            run = truncated_simulate
        else:
            stop = StopRule(t_end=task.t_end, max_events=task.max_events)
            run = simulate
        trajectory = run(
            task.spec,
            task.scaling,
            initial,
            stop,
            sample_times=[0.0, task.t_end],
            seed=task.seed,
            index=task.index,
            track_martingales=task.track_martingales,
            observer=_Observers(*observers),
        )
    except (PositivityViolation, EventCapExceeded, RateOverflow, ValueError) as e:
        return ReplicaResult(index=task.index, seed=task.seed, success=False, error=f"{type(e).__name__}: {e}")

    tau = None
    if task.truncation is not None and trajectory.truncated:
        tau = trajectory.tau
    elif primary is not None:
        tau = primary.tau
    return ReplicaResult(
        index=task.index,
        seed=task.seed,
        sup_error=primary.worst if primary is not None else None,
        sup_error_ref=fine.worst if fine is not None else None,
        tau=tau,
        events=dict(sorted(trajectory.final.event_counts.items())),
        martingales={
            name: [float(x) for x in values] for name, values in (trajectory.martingales or {}).items()
        },
    )


def execute(tasks: Sequence[ReplicaTask], workers: int = 1) -> List[ReplicaResult]:
    """Run tasks, in a process pool when workers > 1; results are ordered by index"""
    results: List[ReplicaResult] = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(run_replica, task) for task in tasks]
            for future in as_completed(futures):
                results.append(future.result())
    else:
        results = [run_replica(task) for task in tasks]
    results.sort(key=lambda r: r.index)
    failures = [r for r in results if not r.success]
    if failures:
        run_logger.warning(
            "Replica failures",
            context={"failed": len(failures), "total": len(results), "first": failures[0].error},
        )
    return results


def run_ensemble(
    spec: NetworkSpec,
    scaling: ScalingParams,
    v_ref: LimitSolution,
    replicas: int,
    seed: Optional[int] = None,
    t_end: Optional[float] = None,
    fine: Optional[LimitSolution] = None,
    epsilon0: Optional[float] = None,
    truncate: bool = False,
    track_martingales: bool = False,
    workers: int = 1,
    max_events: Optional[int] = None,
    index_offset: int = 0,
) -> List[ReplicaResult]:
    """
    Independent trajectories started from u^N(0) = P_N v(0), scored against v^N.

    Args:
        spec: Network
        scaling: Lattice and population scale; N must match v_ref
        v_ref: Discretized limit at the same N
        replicas: Number of trajectories
        seed: Master seed (settings.SEED); replica r uses stream (seed, index_offset + r)
        t_end: Horizon (v_ref horizon)
        fine: Refined limit whose block average gives the second error column
        epsilon0: Tube radius whose first exit time is reported
        truncate: Continue deterministically after the exit instead of only recording it
        track_martingales: Attach the compensated statistics to every replica
        workers: Process count
        max_events: Event cap per replica

    Returns:
        One ReplicaResult per replica, ordered by index
    """
    if v_ref.n_sites != scaling.n_sites:
        raise ValueError(f"reference has {v_ref.n_sites} sites, scaling has {scaling.n_sites}")
    t_end = v_ref.t_end if t_end is None else t_end
    if v_ref.t_end < t_end - 1e-12:
        raise ValueError(f"reference horizon {v_ref.t_end} is shorter than {t_end}")
    if truncate and epsilon0 is None:
        raise ValueError("truncated ensembles need epsilon0")
    seed = settings.SEED if seed is None else int(seed)

    fine_c = fine_d = None
    if fine is not None:
        fine_c = np.stack([block_average_rows(fine.at(float(t))[0], scaling.n_sites) for t in v_ref.times])
        fine_d = np.stack([block_average_rows(fine.at(float(t))[1], scaling.n_sites) for t in v_ref.times])

    tasks = [
        ReplicaTask(
            spec=spec,
            scaling=scaling,
            initial_c=v_ref.v_c[0],
            initial_d=v_ref.v_d[0],
            t_end=t_end,
            seed=seed,
            index=index_offset + r,
            max_events=settings.MAX_EVENTS if max_events is None else max_events,
            times=v_ref.times,
            ref_c=v_ref.v_c,
            ref_d=v_ref.v_d,
            fine_c=fine_c,
            fine_d=fine_d,
            epsilon0=epsilon0,
            truncation=v_ref if truncate else None,
            track_martingales=track_martingales,
        )
        for r in range(replicas)
    ]
    started = time.perf_counter()
    results = execute(tasks, workers)
    run_logger.info(
        "Ensemble finished",
        context={
            "n_sites": scaling.n_sites,
            "mu": scaling.mu,
            "replicas": replicas,
            "seconds": round(time.perf_counter() - started, 3),
        },
    )
    return results


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def summarize_pair(
    scaling: ScalingParams,
    results: Sequence[ReplicaResult],
    epsilon_levels: Sequence[float],
    t_end: float,
    limit_err: Optional[float] = None,
    with_tau: bool = False,
) -> PairSummary:
    ok = [r for r in results if r.success and r.sup_error is not None]
    errors = np.array([r.sup_error for r in ok])
    summary = PairSummary(
        n_sites=scaling.n_sites,
        mu=scaling.mu,
        replicas=len(results),
        failures=len(results) - len(ok),
        median_error=float(np.median(errors)) if errors.size else None,
        quantiles={f"q{int(q * 100):02d}": float(np.quantile(errors, q)) for q in QUANTILES} if errors.size else {},
        exceedance={f"{eps:g}": float(np.mean(errors > eps)) for eps in epsilon_levels} if errors.size else {},
        limit_error=limit_err,
    )
    if with_tau and ok:
        summary.tau_fraction = float(np.mean([r.tau is not None and r.tau < t_end for r in ok]))
    if limit_err is not None and ok and all(r.sup_error_ref is not None for r in ok):
        summary.decomposition_ok = all(
            r.sup_error_ref <= r.sup_error + limit_err + DECOMPOSITION_SLACK for r in ok
        )
    return summary


def lln_sweep(
    plan: SweepPlan,
    spec: NetworkSpec,
    workers: int = 1,
    max_events: Optional[int] = None,
    config: Optional[Dict[str, object]] = None,
) -> ExperimentReport:
    """
    Sup-norm errors of the stochastic model against the limit along a schedule.

    Every pair is scored against its own discretized limit v^N and against the
    block average of the refined surrogate v^{N_ref}.

    Args:
        plan: Validated schedule
        spec: Network
        workers: Process count for the replicas
        max_events: Event cap per replica
        config: Resolved run configuration embedded in the report

    Returns:
        ExperimentReport with one PairSummary per pair and the headline checks
    """
    times = np.linspace(0.0, plan.t_end, plan.sample_points)
    reference = solve_discrete_limit(spec, plan.n_ref, t_end=plan.t_end, sample_times=times)
    report = ExperimentReport(config=config or {}, plan=plan)
    for position, pair in enumerate(plan.pairs):
        scaling = ScalingParams(n_sites=pair.n_sites, mu=pair.mu)
        v_n = solve_discrete_limit(spec, pair.n_sites, t_end=plan.t_end, sample_times=times)
        results = run_ensemble(
            spec,
            scaling,
            v_n,
            plan.replicas,
            seed=plan.seed,
            t_end=plan.t_end,
            fine=reference,
            epsilon0=plan.epsilon0,
            workers=workers,
            max_events=max_events,
            index_offset=position * plan.replicas,
        )
        summary = summarize_pair(
            scaling, results, plan.epsilon_levels, plan.t_end,
            limit_err=limit_error(v_n, reference), with_tau=plan.epsilon0 is not None,
        )
        report.pairs.append(summary)
        report.replicas[f"{pair.n_sites},{pair.mu:g}"] = list(results)
        run_logger.info(
            "Sweep pair done",
            context={"n_sites": pair.n_sites, "mu": pair.mu, "median_error": summary.median_error},
        )
    report.checks = sweep_checks(report.pairs, plan.epsilon_levels)
    return report


def sweep_checks(pairs: Sequence[PairSummary], epsilon_levels: Sequence[float]) -> List[CheckResult]:
    """Headline convergence criteria of a sweep"""
    medians = [p.median_error for p in pairs]
    checks: List[CheckResult] = []
    if any(m is None for m in medians):
        return [CheckResult(name="median_available", passed=False)]
    checks.append(CheckResult(
        name="median_strictly_decreasing",
        passed=all(b < a for a, b in zip(medians, medians[1:])),
        details={"medians": medians},
    ))
    if len(medians) > 1:
        checks.append(CheckResult(
            name="final_median_halved",
            passed=medians[-1] <= 0.5 * medians[0],
            value=medians[-1],
            threshold=0.5 * medians[0],
        ))
    top = f"{max(epsilon_levels):g}"
    frequencies = [p.exceedance.get(top, 0.0) for p in pairs]
    checks.append(CheckResult(
        name=f"exceedance_{top}_non_increasing",
        passed=all(b <= a for a, b in zip(frequencies, frequencies[1:])),
        details={"frequencies": frequencies},
    ))
    decompositions = [p.decomposition_ok for p in pairs if p.decomposition_ok is not None]
    if decompositions:
        checks.append(CheckResult(name="error_decomposition", passed=all(decompositions)))
    return checks


# ---------------------------------------------------------------------------
# Martingale suite
# ---------------------------------------------------------------------------

def martingale_suite(
    spec: NetworkSpec,
    scaling: ScalingParams,
    replicas: int,
    t_end: float,
    seed: Optional[int] = None,
    workers: int = 1,
    initial: Optional[PairField] = None,
    reference: Optional[LimitSolution] = None,
    epsilon0: Optional[float] = None,
    max_events: Optional[int] = None,
) -> List[MartingaleStat]:
    """
    Monte Carlo mean, standard error and z-score of every compensated statistic.

    With a reference and epsilon0 the runs are truncated and the statistics
    are stopped at tau.

    Returns:
        One MartingaleStat per (identity, component)
    """
    seed = settings.SEED if seed is None else int(seed)
    if initial is None:
        initial = PairField(
            project_pn(spec.initial.v0_c, scaling.n_sites, spec.initial.constants),
            project_pn(spec.initial.v0_d, scaling.n_sites, spec.initial.constants),
        )
    truncate = reference is not None and epsilon0 is not None
    tasks = [
        ReplicaTask(
            spec=spec,
            scaling=scaling,
            initial_c=initial.u_c.values,
            initial_d=initial.u_d.values,
            t_end=t_end,
            seed=seed,
            index=r,
            max_events=settings.MAX_EVENTS if max_events is None else max_events,
            epsilon0=epsilon0 if truncate else None,
            truncation=reference if truncate else None,
            track_martingales=True,
        )
        for r in range(replicas)
    ]
    started = time.perf_counter()
    results = [r for r in execute(tasks, workers) if r.success]
    failures = replicas - len(results)
    run_logger.info(
        "Martingale suite finished",
        context={"replicas": replicas, "failures": failures, "seconds": round(time.perf_counter() - started, 3)},
    )
    return martingale_statistics([r.martingales for r in results], failures=failures)


def martingale_statistics(
    samples: Sequence[Dict[str, List[float]]],
    failures: int = 0,
) -> List[MartingaleStat]:
    """Aggregate per-replica terminal values into z-scores; failures are carried on every row"""
    if not samples:
        return []
    stats: List[MartingaleStat] = []
    for identity in sorted(samples[0]):
        values = np.array([s[identity] for s in samples], dtype=float)
        count = values.shape[0]
        means = values.mean(axis=0)
        errors = values.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros(values.shape[1])
        for component, (mean, se) in enumerate(zip(means, errors)):
            if se > 0:
                z = mean / se
            else:
                z = 0.0 if abs(mean) < 1e-300 else math.copysign(math.inf, mean)
            stats.append(MartingaleStat(identity=identity, component=component, mean=float(mean),
                                        std_error=float(se), z=float(z), samples=count, failures=failures))
    return stats


def martingale_checks(stats: Sequence[MartingaleStat], threshold: Optional[float] = None) -> List[CheckResult]:
    threshold = settings.Z_THRESHOLD if threshold is None else threshold
    worst: Dict[str, float] = {}
    for stat in stats:
        worst[stat.identity] = max(worst.get(stat.identity, 0.0), abs(stat.z))
    return [
        CheckResult(name=f"martingale_{identity}", passed=value <= threshold, value=value, threshold=threshold)
        for identity, value in sorted(worst.items())
    ]
