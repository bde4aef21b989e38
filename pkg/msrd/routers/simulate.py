"""Single-trajectory simulation command"""
import numpy as np

from msrd.routers import EXIT_OK, EXIT_RUNTIME, CommandContext, CommandRouter
from msrd.schemas.network import ScalingParams
from msrd.services.artifacts import path_frame
from msrd.services.checks import jump_bound_check
from msrd.services.grid import PairField, project_pn, snapshot_bytes
from msrd.services.limit import solve_discrete_limit
from msrd.services.run_logger import run_logger
from msrd.services.ssa import (
    EventCapExceeded,
    PositivityViolation,
    RateOverflow,
    StopRule,
    simulate as simulate_path,
    truncated_simulate,
)

router = CommandRouter()


@router.command("simulate", help="Simulate one trajectory of the jump process")
def simulate(context: CommandContext) -> int:
    config = context.config
    spec = context.spec
    scaling = ScalingParams(n_sites=config.n_sites, mu=config.mu)
    constants = spec.initial.constants
    initial = PairField(
        project_pn(spec.initial.v0_c, config.n_sites, constants),
        project_pn(spec.initial.v0_d, config.n_sites, constants),
    )
    times = np.linspace(0.0, config.t_end, config.sample_points)
    writer = context.writer()

    truncate = config.epsilon0 is not None
    if truncate:
        reference = solve_discrete_limit(spec, config.n_sites, t_end=config.t_end, dt=config.dt, sample_times=times)
        stop = StopRule(t_end=config.t_end, epsilon0=config.epsilon0, max_events=config.max_events,
                        reference=reference)
        run = truncated_simulate
    else:
        stop = StopRule(t_end=config.t_end, max_events=config.max_events)
        run = simulate_path

    try:
        trajectory = run(
            spec,
            scaling,
            initial,
            stop,
            sample_times=times,
            seed=config.seed,
            track_martingales=config.track_martingales,
            record_events=config.record_events,
        )
    except EventCapExceeded as e:
        partial = e.trajectory
        writer.csv("trajectory_partial.csv", path_frame(partial.times, partial.u_c, partial.u_d), force=True)
        run_logger.error("Simulation stopped at the event cap", error=e)
        context.emit({
            "success": False,
            "command": "simulate",
            "error": str(e),
            "partial_samples": int(partial.times.size),
            "artifacts": writer.written,
        })
        return EXIT_RUNTIME
    except (PositivityViolation, RateOverflow) as e:
        run_logger.error("Simulation failed", error=e)
        context.emit({"success": False, "command": "simulate", "error": f"{type(e).__name__}: {e}"})
        return EXIT_RUNTIME

    jumps = jump_bound_check(spec, scaling, trajectory.jumps.max_jump_c, trajectory.jumps.max_jump_d)
    summary = trajectory.summary()
    summary["jump_bounds"] = jumps
    if trajectory.martingales is not None:
        summary["martingales"] = trajectory.martingales

    writer.csv("trajectory.csv", path_frame(times, trajectory.u_c, trajectory.u_d))
    writer.json("trajectory.json", summary)
    writer.binary("final_c.bin", snapshot_bytes(trajectory.final.u.u_c))
    writer.binary("final_d.bin", snapshot_bytes(trajectory.final.u.u_d))
    if config.record_events:
        writer.binary("events.bin", trajectory.jumps.to_array().tobytes())

    if not jumps.passed:
        run_logger.warning("Logged jump exceeds the admissible size", context=jumps.details)
    context.emit({
        "success": True,
        "command": "simulate",
        "events": summary["events"],
        "tau": summary["tau"],
        "artifacts": writer.written,
    })
    return EXIT_OK
