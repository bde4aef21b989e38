"""Exact event-driven simulation of the spatial jump process"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from msrd.config import settings
from msrd.schemas.network import NetworkSpec, PolynomialRate, Reaction, ReactionClass, ScalingParams
from msrd.services.debit import NetworkCalculus, total_rate
from msrd.services.event_table import EventTable
from msrd.services.grid import GridFunction, PairField
from msrd.services.martingales import MartingaleTracker
from msrd.services.run_logger import run_logger
from msrd.services.streams import EventStream

__all__ = [
    "DIFFUSION",
    "EVENT_CLASSES",
    "EventCapExceeded",
    "EventRecord",
    "JumpEngine",
    "JumpLog",
    "PositivityViolation",
    "RateOverflow",
    "SimState",
    "StopRule",
    "Trajectory",
    "TrajectoryObserver",
    "simulate",
    "slow_jump_vectors",
    "total_rate",
    "truncated_simulate",
]

DIFFUSION = "Diffusion"
EVENT_CLASSES = (
    ReactionClass.FAST_C.value,
    ReactionClass.FAST_MIXED.value,
    DIFFUSION,
    ReactionClass.SLOW_MIXED.value,
    ReactionClass.SLOW_D.value,
)
RATE_CEILING = 1e300
NEVER = math.inf


class PositivityViolation(RuntimeError):
    """A jump drove a concentration below zero; the network breaks its positivity conditions"""


class RateOverflow(ArithmeticError):
    """Total jump intensity is not a finite number"""


class EventCapExceeded(RuntimeError):
    """The event budget ran out before the horizon; ``trajectory`` holds the partial path"""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# Run description
# ---------------------------------------------------------------------------

@dataclass
class StopRule:
    """
    When a run ends and whether it is truncated.

    ``reference`` is any object exposing ``t_end`` and ``at(t) -> (v_c, v_d)``;
    a LimitSolution qualifies.
    """
    t_end: float
    epsilon0: Optional[float] = None
    max_events: int = field(default_factory=lambda: settings.MAX_EVENTS)
    reference: Optional[object] = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.max_events < 0:
            raise ValueError("max_events must be non-negative")
        if self.epsilon0 is not None:
            if self.epsilon0 < 0:
                raise ValueError("epsilon0 must be non-negative")
            if not 0.0 < self.epsilon0 < 1.0:
                run_logger.warning(
                    "Truncation radius outside (0, 1)",
                    context={"epsilon0": self.epsilon0},
                )


@dataclass
class SimState:
    t: float
    u: PairField
    master_seed: int
    index: int
    draws: int
    event_counts: Dict[str, int]


class EventRecord:
    """
    One applied event.

    Local events (fast and diffusion) carry ``local`` as (site, delta u_C)
    pairs; slow events carry dense ``jump_c`` and ``jump_d``.
    """
    __slots__ = ("time", "channel", "site", "label", "local", "jump_c", "jump_d")

    def __init__(self, time, channel, site, label, local=None, jump_c=None, jump_d=None):
        self.time = time
        self.channel = channel
        self.site = site
        self.label = label
        self.local = local
        self.jump_c = jump_c
        self.jump_d = jump_d

    @property
    def is_slow(self) -> bool:
        return self.jump_c is not None

    def dense(self, n_sites: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.is_slow:
            return self.jump_c, self.jump_d
        jump_c = np.zeros(n_sites)
        for site, delta in self.local:
            jump_c[site] += delta
        return jump_c, np.zeros(n_sites)


EVENT_LOG_VERSION = 1


def event_log_dtype(n_sites: int) -> np.dtype:
    """Little-endian fixed-width record: time, channel, site, jump_C[N], jump_D[N]"""
    return np.dtype([
        ("time", "<f8"),
        ("channel", "<i8"),
        ("site", "<i8"),
        ("jump_c", "<f8", (n_sites,)),
        ("jump_d", "<f8", (n_sites,)),
    ])


class JumpLog:
    """Running squared-jump accumulators, optionally backed by the full event record"""

    def __init__(self, n_sites: int, keep_records: bool = False):
        self.n = n_sites
        self.sq_c = np.zeros(n_sites)
        self.cross_c = np.zeros(n_sites)
        self.sq_d = np.zeros(n_sites)
        self.max_jump_c = 0.0
        self.max_jump_d = 0.0
        self.records: Optional[List[Tuple[float, int, int, np.ndarray, np.ndarray]]] = [] if keep_records else None

    def add(self, event: EventRecord):
        n = self.n
        if event.is_slow:
            jc, jd = event.jump_c, event.jump_d
            self.sq_c += jc * jc
            self.cross_c += jc * np.roll(jc, -1)
            self.sq_d += jd * jd
            if jc.size:
                self.max_jump_c = max(self.max_jump_c, float(np.max(np.abs(jc))))
                self.max_jump_d = max(self.max_jump_d, float(np.max(np.abs(jd))))
        else:
            merged: Dict[int, float] = {}
            for site, delta in event.local:
                merged[site] = merged.get(site, 0.0) + delta
            for site, delta in merged.items():
                self.sq_c[site] += delta * delta
                self.cross_c[site] += delta * merged.get((site + 1) % n, 0.0)
                self.max_jump_c = max(self.max_jump_c, abs(delta))
        if self.records is not None:
            jc, jd = event.dense(n)
            self.records.append((event.time, event.channel, event.site, np.array(jc), np.array(jd)))

    def recompute(self) -> "JumpLog":
        """Fresh accumulators rebuilt from the stored records"""
        if self.records is None:
            raise ValueError("event records were not kept for this run")
        log = JumpLog(self.n)
        for time, channel, site, jc, jd in self.records:
            log.add(EventRecord(time, channel, site, None, jump_c=jc, jump_d=jd))
        return log

    def to_array(self) -> np.ndarray:
        if self.records is None:
            raise ValueError("event records were not kept for this run")
        out = np.zeros(len(self.records), dtype=event_log_dtype(self.n))
        for row, (time, channel, site, jc, jd) in enumerate(self.records):
            out[row] = (time, channel, site, jc, jd)
        return out

    def write_binary(self, path: str):
        self.to_array().tofile(path)

    @staticmethod
    def read_binary(path: str, n_sites: int) -> np.ndarray:
        return np.fromfile(path, dtype=event_log_dtype(n_sites))

    def summary(self) -> Dict[str, object]:
        return {
            "sq_c": self.sq_c,
            "cross_c": self.cross_c,
            "sq_d": self.sq_d,
            "max_jump_c": self.max_jump_c,
            "max_jump_d": self.max_jump_d,
        }


@dataclass(eq=False)
class Trajectory:
    """Sampled path of one run"""
    times: np.ndarray
    u_c: np.ndarray
    u_d: np.ndarray
    final: SimState
    jumps: JumpLog
    tau: float = NEVER
    martingales: Optional[Dict[str, np.ndarray]] = None
    deterministic_steps: int = 0

    @property
    def snapshots(self) -> List[PairField]:
        return [PairField.from_arrays(c, d) for c, d in zip(self.u_c, self.u_d)]

    @property
    def truncated(self) -> bool:
        return math.isfinite(self.tau)

    def summary(self) -> Dict[str, object]:
        return {
            "seed": self.final.master_seed,
            "index": self.final.index,
            "t_final": self.final.t,
            "events": dict(sorted(self.final.event_counts.items())),
            "draws": self.final.draws,
            "tau": self.tau if self.truncated else None,
            "deterministic_steps": self.deterministic_steps,
            "jumps": self.jumps.summary(),
        }


class TrajectoryObserver:
    """Hooks called by the event loop; the default does nothing"""

    def start(self, t: float, uc: np.ndarray, ud: np.ndarray):
        pass

    def advance(self, t: float, uc: np.ndarray, ud: np.ndarray):
        """Called before an event at time t, with the pre-event state"""

    def jumped(self, event: EventRecord, uc: np.ndarray, ud: np.ndarray):
        pass

    def finish(self, t: float, uc: np.ndarray, ud: np.ndarray):
        pass


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

def _compile_rate(rate: PolynomialRate) -> Callable[[float, float], float]:
    terms = tuple((float(t.coefficient), t.e_c, t.e_d) for t in rate.terms)

    def evaluate(c: float, d: float) -> float:
        total = 0.0
        for coefficient, e_c, e_d in terms:
            total += coefficient * c ** e_c * d ** e_d
        return total

    return evaluate


class JumpEngine:
    """
    State, channel table and random stream of one trajectory.

    Channels are enumerated site-major; site j owns the block
    [fast reactions..., diffuse left, diffuse right, slow reactions...].
    """

    def __init__(
        self,
        spec: NetworkSpec,
        scaling: ScalingParams,
        initial: PairField,
        stream: EventStream,
        t0: float = 0.0,
    ):
        if initial.n_sites != scaling.n_sites:
            raise ValueError(f"initial state has {initial.n_sites} sites, scaling expects {scaling.n_sites}")
        if not initial.is_nonnegative():
            raise ValueError("initial state must be non-negative")
        self.calc = NetworkCalculus(spec, scaling)
        self.n = scaling.n_sites
        self.mu = float(scaling.mu)
        self.stream = stream
        self.t = float(t0)
        self.uc = np.array(initial.u_c.values)
        self.ud = np.array(initial.u_d.values)

        self._fast = [
            (_compile_rate(r.rate), r.gamma_c / self.mu, r.reaction_class.value) for r in self.calc.fast
        ]
        self._slow = [(_compile_rate(r.rate), r.reaction_class.value) for r in self.calc.slow]
        self.n_fast = len(self._fast)
        self.n_slow = len(self._slow)
        self.width = self.n_fast + 2 + self.n_slow
        self.diffusion_rate = self.mu * self.n * self.n

        self.table = EventTable(self.n * self.width)
        self.event_count = 0
        self.counts = {label: 0 for label in EVENT_CLASSES}
        self.rebuild()

    # -- rates ---------------------------------------------------------------

    def site_rates(self, j: int) -> List[float]:
        c = float(self.uc[j])
        d = float(self.ud[j])
        mu = self.mu
        rates = [mu * evaluate(c, d) for evaluate, _, _ in self._fast]
        hop = self.diffusion_rate * c
        rates.append(hop)
        rates.append(hop)
        rates.extend(evaluate(c, d) for evaluate, _ in self._slow)
        return rates

    def all_rates(self) -> List[float]:
        rates: List[float] = []
        for j in range(self.n):
            rates.extend(self.site_rates(j))
        return rates

    def rebuild(self):
        self.table.rebuild(self.all_rates())

    def refresh_sites(self, sites: Sequence[int]):
        width = self.width
        for j in set(sites):
            self.table.update_many(j * width, self.site_rates(j))

    def consistency(self) -> float:
        """Relative gap between the incremental total and a from-scratch recomputation"""
        exact = math.fsum(self.all_rates())
        return abs(self.table.total - exact) / max(exact, 1e-300)

    # -- events --------------------------------------------------------------

    def propose(self) -> Optional[Tuple[float, float]]:
        """Draw the next event time and sampling target, or None when the total rate is zero"""
        total = self.table.total
        if not math.isfinite(total) or total > RATE_CEILING:
            raise RateOverflow(f"total rate {total} at t={self.t}")
        if total <= 0.0:
            return None
        exponential, uniform = self.stream.next_pair()
        return self.t + exponential / total, uniform * total

    def apply(self, t_event: float, target: float) -> EventRecord:
        channel = self.table.sample(target)
        j, slot = divmod(channel, self.width)
        self.t = t_event
        self.event_count += 1
        n = self.n

        if slot < self.n_fast:
            _, step, label = self._fast[slot]
            self.uc[j] += step
            self._check_site(j, label)
            event = EventRecord(t_event, channel, j, label, local=((j, step),))
            self.refresh_sites((j,))
        elif slot < self.n_fast + 2:
            label = DIFFUSION
            k = (j - 1) % n if slot == self.n_fast else (j + 1) % n
            quantum = 1.0 / self.mu
            self.uc[j] -= quantum
            self.uc[k] += quantum
            self._check_site(j, label)
            event = EventRecord(t_event, channel, j, label, local=((j, -quantum), (k, quantum)))
            self.refresh_sites((j, k))
        else:
            index = slot - self.n_fast - 2
            label = self._slow[index][1]
            jump_c, jump_d = self.calc.slow_jump_column(index, self.uc, self.ud, j)
            self.uc += jump_c
            self.ud += jump_d
            self._check_all(label)
            event = EventRecord(t_event, channel, j, label, jump_c=jump_c, jump_d=jump_d)
            self.rebuild()

        self.counts[label] += 1
        if self.event_count % settings.REBUILD_INTERVAL == 0:
            self.table.rebuild()
        return event

    def step(self) -> Optional[EventRecord]:
        """Advance by exactly one event; None when no channel can fire"""
        proposal = self.propose()
        if proposal is None:
            return None
        return self.apply(*proposal)

    def _check_site(self, j: int, label: str):
        value = self.uc[j]
        if value < 0.0:
            if value < -settings.POSITIVITY_TOL:
                raise PositivityViolation(f"{label} event drove u_C at site {j} to {value} (t={self.t})")
            self.uc[j] = 0.0

    def _check_all(self, label: str):
        for name, values in (("u_C", self.uc), ("u_D", self.ud)):
            low = float(values.min())
            if low < 0.0:
                if low < -settings.POSITIVITY_TOL:
                    raise PositivityViolation(f"{label} event drove {name} to {low} (t={self.t})")
                np.maximum(values, 0.0, out=values)

    def state(self) -> SimState:
        return SimState(
            t=self.t,
            u=PairField.from_arrays(self.uc, self.ud),
            master_seed=self.stream.master_seed,
            index=self.stream.index,
            draws=self.stream.draws,
            event_counts=dict(self.counts),
        )


def slow_jump_vectors(
    spec: NetworkSpec,
    scaling: ScalingParams,
    u: PairField,
    site: int,
    reaction: Union[int, Reaction],
) -> Tuple[GridFunction, GridFunction]:
    """
    Correlated increments of a slow reaction fired at a source site.

    Args:
        spec: Network
        scaling: Lattice and population scale
        u: Pre-jump state
        site: Source site (0-based)
        reaction: Reaction object or its index in ``spec.reactions``

    Returns:
        (jump_C, jump_D)
    """
    if isinstance(reaction, int):
        reaction = spec.reactions[reaction]
    if reaction.reaction_class.is_fast:
        raise ValueError(f"reaction {reaction.name!r} is not slow")
    calc = NetworkCalculus(spec, scaling)
    k = next(i for i, r in enumerate(calc.slow) if r is reaction)
    jump_c, jump_d = calc.slow_jump_column(k, u.u_c.values, u.u_d.values, site % calc.n)
    return GridFunction(jump_c), GridFunction(jump_d)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

class _Recorder:
    def __init__(self, sample_times: np.ndarray, n_sites: int):
        self.times = sample_times
        self.u_c = np.zeros((sample_times.size, n_sites))
        self.u_d = np.zeros((sample_times.size, n_sites))
        self.next = 0

    def record_before(self, t: float, uc: np.ndarray, ud: np.ndarray, inclusive: bool = False):
        times = self.times
        while self.next < times.size and (times[self.next] < t or (inclusive and times[self.next] <= t)):
            self.u_c[self.next] = uc
            self.u_d[self.next] = ud
            self.next += 1

    def partial(self):
        k = self.next
        return self.times[:k].copy(), self.u_c[:k].copy(), self.u_d[:k].copy()


def _sample_grid(stop: StopRule, sample_times: Optional[Sequence[float]]) -> np.ndarray:
    if sample_times is None:
        return np.linspace(0.0, stop.t_end, settings.SAMPLE_POINTS)
    times = np.asarray(sample_times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) < 0):
        raise ValueError("sample times must be a non-decreasing 1-D sequence")
    if times.size and (times[0] < 0 or times[-1] > stop.t_end):
        raise ValueError("sample times must lie in [0, t_end]")
    return times


def _tube_distance(uc, ud, reference, t: float) -> float:
    vc, vd = reference.at(t)
    return float(np.max(np.abs(uc - vc)) + np.max(np.abs(ud - vd)))


def simulate(
    spec: NetworkSpec,
    scaling: ScalingParams,
    initial: PairField,
    stop: StopRule,
    sample_times: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    index: int = 0,
    track_martingales: bool = False,
    record_events: bool = False,
    observer: Optional[TrajectoryObserver] = None,
) -> Trajectory:
    """
    Exact realization of the jump process up to ``stop.t_end``.

    Snapshots are right-continuous: the state at a sample time includes every
    event at or before it. The run is a pure function of
    (seed, index, spec, scaling, initial, stop).

    Args:
        spec: Network
        scaling: Lattice and population scale
        initial: Non-negative initial state
        stop: Horizon and event cap
        sample_times: Snapshot times in [0, t_end] (default: uniform grid)
        seed: Master seed (default settings.SEED)
        index: Trajectory index within an ensemble
        track_martingales: Accumulate the compensated jump statistics
        record_events: Keep every event for replay and export
        observer: Extra hooks, e.g. a running error monitor

    Returns:
        Trajectory

    Raises:
        EventCapExceeded: with the partial trajectory attached
    """
    return _run(spec, scaling, initial, stop, sample_times, seed, index,
                track_martingales, record_events, observer, truncate=False)


def truncated_simulate(
    spec: NetworkSpec,
    scaling: ScalingParams,
    initial: PairField,
    stop: StopRule,
    sample_times: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    index: int = 0,
    track_martingales: bool = False,
    record_events: bool = False,
    observer: Optional[TrajectoryObserver] = None,
) -> Trajectory:
    """
    Jump process stopped at the first exit from the epsilon0-tube around the
    reference, then continued by the deterministic flow.

    The tube is checked after every event and at every reference grid time.
    Martingale statistics freeze at tau. ``Trajectory.tau`` is inf when the
    tube is never left.
    """
    if stop.reference is None or stop.epsilon0 is None:
        raise ValueError("truncated runs need a reference path and epsilon0")
    if stop.reference.t_end < stop.t_end - 1e-12:
        raise ValueError(
            f"reference horizon {stop.reference.t_end} is shorter than t_end {stop.t_end}"
        )
    return _run(spec, scaling, initial, stop, sample_times, seed, index,
                track_martingales, record_events, observer, truncate=True)


def _run(spec, scaling, initial, stop, sample_times, seed, index,
         track_martingales, record_events, observer, truncate) -> Trajectory:
    seed = settings.SEED if seed is None else int(seed)
    engine = JumpEngine(spec, scaling, initial, EventStream(seed, index))
    samples = _sample_grid(stop, sample_times)
    recorder = _Recorder(samples, engine.n)
    jumps = JumpLog(engine.n, keep_records=record_events)
    tracker = MartingaleTracker(engine.calc, stop.t_end) if track_martingales else None
    observer = observer or TrajectoryObserver()
    reference = stop.reference if truncate else None
    grid = np.asarray(reference.times, dtype=float) if reference is not None else np.zeros(0)
    grid_next = 0

    uc, ud = engine.uc, engine.ud
    observer.start(engine.t, uc, ud)
    if tracker is not None:
        tracker.start(engine.t, uc, ud)

    def finish(tau: float, steps: int) -> Trajectory:
        if tracker is not None:
            tracker.advance(stop.t_end)
        observer.finish(stop.t_end, engine.uc, engine.ud)
        engine.t = stop.t_end
        return Trajectory(
            times=recorder.times.copy(),
            u_c=recorder.u_c,
            u_d=recorder.u_d,
            final=engine.state(),
            jumps=jumps,
            tau=tau,
            martingales=tracker.finish(engine.uc, engine.ud) if tracker is not None else None,
            deterministic_steps=steps,
        )

    def continue_deterministic(t_from: float) -> Trajectory:
        if tracker is not None:
            tracker.advance(t_from)
            tracker.freeze(engine.uc, engine.ud)
        engine.t = t_from
        observer.advance(t_from, engine.uc, engine.ud)
        steps = _deterministic_flow(engine, recorder, t_from, stop.t_end, observer, grid)
        return finish(t_from, steps)

    if truncate and _tube_distance(uc, ud, reference, engine.t) > stop.epsilon0:
        return continue_deterministic(engine.t)

    while True:
        proposal = engine.propose()
        t_next = NEVER if proposal is None else proposal[0]
        horizon = min(t_next, stop.t_end)

        if truncate:
            while grid_next < grid.size and grid[grid_next] <= engine.t:
                grid_next += 1
            while grid_next < grid.size and grid[grid_next] <= horizon:
                g = float(grid[grid_next])
                grid_next += 1
                if _tube_distance(uc, ud, reference, g) > stop.epsilon0:
                    recorder.record_before(g, uc, ud, inclusive=True)
                    return continue_deterministic(g)

        recorder.record_before(t_next, uc, ud)
        if t_next > stop.t_end:
            break
        if engine.event_count >= stop.max_events:
            times, path_c, path_d = recorder.partial()
            partial = Trajectory(times=times, u_c=path_c, u_d=path_d, final=engine.state(), jumps=jumps)
            run_logger.warning(
                "Event cap reached",
                context={"max_events": stop.max_events, "t": engine.t, "seed": seed, "index": index},
            )
            raise EventCapExceeded(
                f"event cap {stop.max_events} reached at t={engine.t:.6g} before t_end={stop.t_end}",
                partial,
            )

        observer.advance(t_next, uc, ud)
        if tracker is not None:
            tracker.advance(t_next)
        event = engine.apply(*proposal)
        jumps.add(event)
        observer.jumped(event, uc, ud)
        if tracker is not None:
            jump_c, jump_d = event.dense(engine.n)
            tracker.jump(jump_c, jump_d, uc, ud)

        if truncate and _tube_distance(uc, ud, reference, event.time) > stop.epsilon0:
            return continue_deterministic(event.time)

    return finish(NEVER, 0)


def _deterministic_flow(
    engine: JumpEngine,
    recorder: _Recorder,
    t_from: float,
    t_end: float,
    observer: TrajectoryObserver,
    grid: np.ndarray,
) -> int:
    """
    Explicit Euler for du/dt = (Delta_N u_C + F(u), G^N(u)) from t_from to t_end.

    Steps land on every sample time and every reference grid time, and the
    observer sees the state after each step.
    """
    calc = engine.calc
    n = engine.n
    h_max = min(1.0 / (4.0 * n * n), 1e-3)
    uc, ud = engine.uc, engine.ud
    t = t_from
    steps = 0
    grid_next = int(np.searchsorted(grid, t, side="right"))
    recorder.record_before(t, uc, ud, inclusive=True)
    while t < t_end:
        # land exactly on the next sample time, grid time or the horizon
        landing = t_end
        if recorder.next < recorder.times.size:
            landing = min(landing, float(recorder.times[recorder.next]))
        if grid_next < grid.size:
            landing = min(landing, float(grid[grid_next]))
        t_next = landing if landing - t <= h_max else t + h_max
        rate_c, rate_d = calc.truncated_field(uc, ud)
        uc += (t_next - t) * rate_c
        ud += (t_next - t) * rate_d
        t = t_next
        steps += 1
        while grid_next < grid.size and grid[grid_next] <= t:
            grid_next += 1
        recorder.record_before(t, uc, ud, inclusive=True)
        observer.advance(t, uc, ud)
    engine.t = t
    return steps
