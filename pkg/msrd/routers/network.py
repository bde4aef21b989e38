"""Network validation command"""
from msrd.routers import EXIT_OK, CommandContext, CommandRouter, argument
from msrd.services.model import assumption_check

router = CommandRouter()


@router.command(
    "validate",
    help="Validate a network document and sample its growth conditions",
    arguments=[
        argument("--box", type=float, nargs=4, metavar=("C_LO", "C_HI", "D_LO", "D_HI"),
                 default=[0.0, 5.0, 0.0, 5.0], help="State box for the assumption sampler"),
        argument("--rho-c", type=float, default=None, help="C radius for the negativity condition"),
    ],
)
def validate(context: CommandContext) -> int:
    """
    The network was already validated while loading the config; violations
    never reach this handler (exit 2 upstream).
    """
    spec = context.spec
    c_lo, c_hi, d_lo, d_hi = context.args.box
    report = assumption_check(spec, [[c_lo, c_hi], [d_lo, d_hi]], rho_c=context.args.rho_c)

    writer = context.writer()
    writer.json("validation.json", {
        "valid": True,
        "network": spec,
        "reactions": len(spec.reactions),
        "violations": [],
        "assumptions": report,
    }, force=True)

    context.emit({
        "success": True,
        "command": "validate",
        "reactions": len(spec.reactions),
        "c1": report.c1_status,
        "c2": report.c2_status,
        "d2": report.d2_status,
        "artifacts": writer.written,
    })
    return EXIT_OK
