"""Law-of-large-numbers sweep command"""
from msrd.routers import EXIT_OK, CommandContext, CommandRouter
from msrd.schemas.run import SweepPlan
from msrd.services.artifacts import plot_frame, replica_frame
from msrd.services.lln import lln_sweep as run_sweep

router = CommandRouter()


@router.command("lln-sweep", help="Sup-norm error of the stochastic model along a (N, mu) schedule")
def lln_sweep(context: CommandContext) -> int:
    """Check verdicts go to the report; the exit code only reflects runtime failures"""
    config = context.config
    plan = SweepPlan(
        pairs=config.schedule,
        replicas=config.replicas,
        t_end=config.t_end,
        seed=config.seed,
        epsilon0=config.epsilon0,
        sample_points=max(config.sample_points, 200),
        n_ref=config.n_ref,
        network=context.spec.name,
    )
    config_dump = config.model_dump(mode="json")
    report = run_sweep(plan, context.spec, workers=config.workers, max_events=config.max_events, config=config_dump)

    writer = context.writer()
    writer.json("lln-sweep.json", {
        "plan": report.plan,
        "pairs": report.pairs,
        "checks": report.checks,
        "schedule_note": report.schedule_note,
    })
    writer.csv("lln-replicas.csv", replica_frame(report))
    if config.plot_data:
        writer.csv("lln-plot.csv", plot_frame(report), force=True)

    context.emit({
        "success": True,
        "command": "lln-sweep",
        "medians": [p.median_error for p in report.pairs],
        "failed": [c.name for c in report.checks if not c.passed],
        "artifacts": writer.written,
    })
    return EXIT_OK
