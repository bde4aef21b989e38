"""Deterministic limit command"""
import numpy as np

from msrd.routers import EXIT_OK, EXIT_RUNTIME, CommandContext, CommandRouter, argument
from msrd.services.artifacts import path_frame
from msrd.services.limit import RefinementError, check_limit_bounds, solve_discrete_limit
from msrd.services.run_logger import run_logger

router = CommandRouter()


@router.command(
    "solve-limit",
    help="Solve the discretized deterministic limit",
    arguments=[
        argument("--strict", action="store_true", help="Fail when step refinement does not converge"),
        argument("--rho-c", type=float, default=None, help="C radius for the a posteriori bounds"),
        argument("--rho-d", type=float, default=None, help="D radius for the a posteriori bounds"),
        argument("--m1", type=float, default=None, help="Linear-growth constant of g"),
    ],
)
def solve_limit(context: CommandContext) -> int:
    config = context.config
    args = context.args
    times = np.linspace(0.0, config.t_end, config.sample_points)
    try:
        solution = solve_discrete_limit(
            context.spec,
            config.n_sites,
            t_end=config.t_end,
            dt=config.dt,
            sample_times=times,
            strict=args.strict,
        )
    except RefinementError as e:
        run_logger.error("Limit refinement failed", error=e)
        context.emit({"success": False, "command": "solve-limit", "error": str(e)})
        return EXIT_RUNTIME

    metadata = solution.metadata()
    if None not in (args.rho_c, args.rho_d, args.m1):
        metadata["bounds"] = check_limit_bounds(solution, context.spec, args.rho_c, args.rho_d, args.m1)

    writer = context.writer()
    writer.csv("limit.csv", path_frame(solution.times, solution.v_c, solution.v_d, names=("v_c", "v_d")))
    writer.json("limit.json", metadata)

    context.emit({
        "success": True,
        "command": "solve-limit",
        "dt": solution.dt,
        "converged": solution.converged,
        "artifacts": writer.written,
    })
    return EXIT_OK
