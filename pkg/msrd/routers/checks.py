"""Acceptance check commands"""
import numpy as np

from msrd.routers import CommandContext, CommandRouter, argument, checks_exit_code
from msrd.schemas.network import ScalingParams
from msrd.schemas.run import CheckResult
from msrd.services.artifacts import ArtifactWriter, bundle_frame, checks_frame, martingale_frame
from msrd.services.checks import SPECTRAL_SIZES, convergence_checks, spectral_checks
from msrd.services.debit import square_amplitudes
from msrd.services.grid import PairField, project_pn
from msrd.services.limit import solve_discrete_limit
from msrd.services.lln import martingale_checks, martingale_suite

router = CommandRouter()


def _finish(context: CommandContext, writer: ArtifactWriter, command: str, checks, payload) -> int:
    writer.json(f"{command}.json", dict(payload, checks=checks))
    writer.csv(f"{command}.csv", checks_frame(checks))
    code = checks_exit_code(checks)
    context.emit({
        "success": code == 0,
        "command": command,
        "failed": [c.name for c in checks if not c.passed],
        "artifacts": writer.written,
    })
    return code


@router.command(
    "spectral-check",
    help="Verify the spectral identities of the discrete Laplacian and its semigroup",
    arguments=[
        argument("--n", type=int, nargs="+", default=list(SPECTRAL_SIZES), help="Lattice sizes (>= 2)"),
    ],
)
def spectral_check(context: CommandContext) -> int:
    reports, checks = spectral_checks(context.args.n, seed=context.config.seed)
    return _finish(context, context.writer(), "spectral-check", checks, {"reports": reports})


@router.command(
    "martingale-check",
    help="Monte Carlo means of the compensated jump statistics",
    arguments=[
        argument("--threshold", type=float, default=None, help="Largest admissible |z|"),
    ],
)
def martingale_check(context: CommandContext) -> int:
    config = context.config
    spec = context.spec
    scaling = ScalingParams(n_sites=config.n_sites, mu=config.mu)
    reference = None
    if config.epsilon0 is not None:
        times = np.linspace(0.0, config.t_end, config.sample_points)
        reference = solve_discrete_limit(spec, config.n_sites, t_end=config.t_end, dt=config.dt, sample_times=times)
    stats = martingale_suite(
        spec,
        scaling,
        config.martingale_replicas,
        config.t_end,
        seed=config.seed,
        workers=config.workers,
        reference=reference,
        epsilon0=config.epsilon0,
        max_events=config.max_events,
    )

    writer = context.writer()
    if stats:
        checks = martingale_checks(stats, context.args.threshold)
        writer.csv("martingale-statistics.csv", martingale_frame(stats))
    else:
        # every replica failed
        checks = [CheckResult(name="martingale_replicas", passed=False, value=0.0)]
    failures = stats[0].failures if stats else config.martingale_replicas
    return _finish(context, writer, "martingale-check", checks, {"statistics": stats, "failures": failures})


@router.command("convergence-check", help="Semigroup, discretization, G^N and generator-scaling convergence")
def convergence_check(context: CommandContext) -> int:
    config = context.config
    spec = context.spec
    checks = convergence_checks(spec, n_ref=config.n_ref, t_end=config.t_end)
    writer = context.writer()
    if config.plot_data:
        # debit and amplitude fields at P_N v0
        constants = spec.initial.constants
        state = PairField(
            project_pn(spec.initial.v0_c, config.n_sites, constants),
            project_pn(spec.initial.v0_d, config.n_sites, constants),
        )
        bundle = square_amplitudes(spec, ScalingParams(n_sites=config.n_sites, mu=config.mu), state)
        writer.csv("debit-bundle.csv", bundle_frame(bundle), force=True)
    return _finish(context, writer, "convergence-check", checks, {})
