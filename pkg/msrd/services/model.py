"""Reaction network validation, rates, gating and kernel weights"""
import math
from typing import List, Optional, Sequence

import numpy as np

from msrd.schemas.network import (
    AssumptionReport,
    Kernel,
    NetworkSpec,
    PolynomialRate,
    ReactionClass,
    ScalingParams,
    SmoothingTheta,
)

RATE_SAMPLE_BOX = (0.0, 10.0)
RATE_SAMPLE_POINTS = 21
INDICATOR_TOL = 1e-12
TWO_PI = 2.0 * math.pi


class NetworkValidationError(ValueError):
    """Raised when a network violates its class constraints"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_network(spec: NetworkSpec) -> List[str]:
    """
    Collect every violated network constraint.

    Violations are returned as data; an empty list means the network is valid.

    Args:
        spec: Network to check

    Returns:
        List of human readable violations prefixed with the reaction index
    """
    violations: List[str] = []
    if not spec.reactions:
        violations.append("network must define at least one reaction")

    grid = np.linspace(RATE_SAMPLE_BOX[0], RATE_SAMPLE_BOX[1], RATE_SAMPLE_POINTS)
    uc, ud = np.meshgrid(grid, grid, indexing="ij")

    for index, reaction in enumerate(spec.reactions):
        prefix = f"reaction {index} ({reaction.name or reaction.reaction_class.value})"
        cls = reaction.reaction_class
        rate = reaction.rate

        if cls == ReactionClass.FAST_MIXED and reaction.gamma_d != 0:
            violations.append(f"{prefix}: FastMixed must have gamma_d = 0")
        if cls == ReactionClass.SLOW_D and reaction.gamma_c != 0:
            violations.append(f"{prefix}: SlowD must have gamma_c = 0")
        if cls == ReactionClass.FAST_C and rate.depends_on_d:
            violations.append(f"{prefix}: FastC rate must depend only on u_C")
        if cls == ReactionClass.SLOW_D and rate.depends_on_c:
            violations.append(f"{prefix}: SlowD rate must depend only on u_D")
        if reaction.gamma_c == 0 and reaction.gamma_d == 0:
            violations.append(f"{prefix}: reaction changes neither species")

        for term in rate.terms:
            if not math.isfinite(term.coefficient):
                violations.append(f"{prefix}: non-finite coefficient")
            elif term.coefficient < 0 and not term.is_constant:
                violations.append(
                    f"{prefix}: coefficient of u_C^{term.e_c} u_D^{term.e_d} must be >= 0"
                )

        values = eval_rate_array(rate, uc, ud)
        if not np.all(np.isfinite(values)):
            violations.append(f"{prefix}: rate is not finite on the sample box")
        elif np.any(values < 0):
            violations.append(f"{prefix}: rate is negative on the sample box")

    violations.extend(_kernel_violations(spec.kernel))
    return violations


def _kernel_violations(kernel: Kernel) -> List[str]:
    if kernel.variant != "TableLookup":
        if kernel.table is not None:
            return [f"kernel: table given for variant {kernel.variant}"]
        return []
    table = kernel.table or []
    if not table:
        return ["kernel: TableLookup requires a non-empty table"]
    values = np.asarray(table, dtype=float)
    problems = []
    if not np.all(np.isfinite(values)):
        problems.append("kernel: table values must be finite")
    if np.any(values < 0):
        problems.append("kernel: table values must be >= 0")
    if not np.array_equal(values, values[::-1]):
        problems.append("kernel: table must be even (v_k = v_{M-1-k})")
    if values.size and values[0] < values.max():
        problems.append("kernel: table maximum must sit at 0")
    return problems


# ---------------------------------------------------------------------------
# Rates and gating
# ---------------------------------------------------------------------------

def eval_rate(rate: PolynomialRate, u_c: float, u_d: float) -> float:
    """
    Evaluate lambda_r at a single on-site state.

    Args:
        rate: Polynomial rate
        u_c: Concentration of C (>= 0)
        u_d: Abundance of D (>= 0)

    Returns:
        Rate value
    """
    if u_c < 0 or u_d < 0:
        raise ValueError(f"rates are defined on the non-negative quadrant, got ({u_c}, {u_d})")
    total = 0.0
    for term in rate.terms:
        total += term.coefficient * (u_c ** term.e_c) * (u_d ** term.e_d)
    return total


def eval_rate_array(rate: PolynomialRate, u_c, u_d) -> np.ndarray:
    """Vectorised rate evaluation without the domain check"""
    u_c = np.asarray(u_c, dtype=float)
    u_d = np.asarray(u_d, dtype=float)
    total = np.zeros(np.broadcast(u_c, u_d).shape)
    for term in rate.terms:
        total = total + term.coefficient * u_c ** term.e_c * u_d ** term.e_d
    return total


def theta_eval(theta: SmoothingTheta, y: float) -> float:
    """
    Evaluate the positivity gate.

    Args:
        theta: Gate definition
        y: Post-jump value

    Returns:
        Gate value in [0, 1]
    """
    if theta.kind == "indicator":
        return 1.0 if y >= -INDICATOR_TOL else 0.0
    if y <= 0.0:
        return 0.0
    if y >= 1.0:
        return 1.0
    return y * y * (3.0 - 2.0 * y)


def theta_array(theta: SmoothingTheta, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if theta.kind == "indicator":
        return (y >= -INDICATOR_TOL).astype(float)
    clipped = np.clip(y, 0.0, 1.0)
    return clipped * clipped * (3.0 - 2.0 * clipped)


def fast_drift(spec: NetworkSpec, u_c, u_d) -> np.ndarray:
    """Pointwise F(y) = sum over fast reactions of gamma^C lambda_r(y)"""
    total = np.zeros(np.broadcast(np.asarray(u_c), np.asarray(u_d)).shape)
    for reaction in spec.by_class(ReactionClass.FAST_C, ReactionClass.FAST_MIXED):
        total = total + reaction.gamma_c * eval_rate_array(reaction.rate, u_c, u_d)
    return total


def slow_drift(spec: NetworkSpec, u_c, u_d) -> np.ndarray:
    """Pointwise ungated g(y) = sum over slow reactions of gamma^D lambda_r(y)"""
    total = np.zeros(np.broadcast(np.asarray(u_c), np.asarray(u_d)).shape)
    for reaction in spec.by_class(ReactionClass.SLOW_MIXED, ReactionClass.SLOW_D):
        total = total + reaction.gamma_d * eval_rate_array(reaction.rate, u_c, u_d)
    return total


# ---------------------------------------------------------------------------
# Kernel calculus
# ---------------------------------------------------------------------------

def kernel_peak(kernel: Kernel) -> float:
    """a(0)"""
    if kernel.variant == "ConstantBox":
        return 1.0
    if kernel.variant == "RaisedCosine":
        return 2.0
    return float(max(kernel.table))


def kernel_mass(kernel: Kernel) -> float:
    """Integral of a over one period"""
    if kernel.variant == "TableLookup":
        return float(np.mean(kernel.table))
    return 1.0


def kernel_l2_squared(kernel: Kernel) -> float:
    """Integral of a^2 over one period"""
    if kernel.variant == "ConstantBox":
        return 1.0
    if kernel.variant == "RaisedCosine":
        return 1.5
    return float(np.mean(np.square(kernel.table)))


def kernel_eval(kernel: Kernel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if kernel.variant == "ConstantBox":
        return np.ones_like(x)
    if kernel.variant == "RaisedCosine":
        return 1.0 + np.cos(TWO_PI * x)
    table = np.asarray(kernel.table, dtype=float)
    cells = np.floor((x - np.floor(x)) * table.size).astype(int) % table.size
    return table[cells]


def kernel_antiderivative(kernel: Kernel, y) -> np.ndarray:
    """A(y) = integral of a from 0 to y"""
    y = np.asarray(y, dtype=float)
    if kernel.variant == "ConstantBox":
        return y.copy()
    if kernel.variant == "RaisedCosine":
        return y + np.sin(TWO_PI * y) / TWO_PI
    return _table_antiderivatives(kernel, y)[0]


def kernel_second_antiderivative(kernel: Kernel, y) -> np.ndarray:
    """Integral of A from 0 to y"""
    y = np.asarray(y, dtype=float)
    if kernel.variant == "ConstantBox":
        return 0.5 * y * y
    if kernel.variant == "RaisedCosine":
        return 0.5 * y * y + (1.0 - np.cos(TWO_PI * y)) / (TWO_PI * TWO_PI)
    return _table_antiderivatives(kernel, y)[1]


def _table_antiderivatives(kernel: Kernel, y: np.ndarray):
    table = np.asarray(kernel.table, dtype=float)
    m = table.size
    h = 1.0 / m
    mass = table.mean()
    # cumulative value at the left edge of each cell, plus the closing total
    left = np.concatenate(([0.0], np.cumsum(table) * h))
    # integral of the in-period antiderivative over whole cells
    cell_area = left[:-1] * h + 0.5 * table * h * h
    left_area = np.concatenate(([0.0], np.cumsum(cell_area)))
    period_area = left_area[-1]

    n = np.floor(y)
    s = y - n
    k = np.minimum(np.floor(s * m).astype(int), m - 1)
    r = s - k * h
    in_period = left[k] + table[k] * r
    in_period_area = left_area[k] + left[k] * r + 0.5 * table[k] * r * r

    first = n * mass + in_period
    second = mass * n * (n - 1.0) / 2.0 + n * period_area + n * mass * s + in_period_area
    return first, second


def kernel_weights(kernel: Kernel, scaling: ScalingParams) -> np.ndarray:
    """
    Correlation weights gamma_ij = integral over I_i of a(x - j/N).

    The matrix is circulant: entry (i, j) depends on (i - j) mod N only.

    Args:
        kernel: Correlation kernel
        scaling: Lattice size

    Returns:
        N x N matrix indexed [target i, source j] (0-based)
    """
    n = scaling.n_sites
    offsets = _centered_offsets(n)
    column = (
        kernel_antiderivative(kernel, offsets / n)
        - kernel_antiderivative(kernel, (offsets - 1) / n)
    )
    return _circulant(column, offsets, n)


def limit_convolution_matrix(kernel: Kernel, n_sites: int) -> np.ndarray:
    """
    Site-averaged convolution W[i, k] = N * integral over I_i, I_k of a(x - y).

    Applying W to site values of a step function gives P_N of its convolution
    with a.
    """
    n = n_sites
    offsets = _centered_offsets(n)
    a2 = lambda d: kernel_second_antiderivative(kernel, d / n)
    column = n * (a2(offsets + 1) - 2.0 * a2(offsets) + a2(offsets - 1))
    return _circulant(column, offsets, n)


def _centered_offsets(n: int) -> np.ndarray:
    return np.arange(n, dtype=float) - (n // 2)


def _circulant(column: np.ndarray, offsets: np.ndarray, n: int) -> np.ndarray:
    by_shift = np.empty(n)
    by_shift[offsets.astype(int) % n] = column
    index = np.arange(n)
    return by_shift[(index[:, None] - index[None, :]) % n]


# ---------------------------------------------------------------------------
# Growth conditions
# ---------------------------------------------------------------------------

def assumption_check(
    spec: NetworkSpec,
    box: Sequence[Sequence[float]],
    rho_c: Optional[float] = None,
    c_bar: Optional[float] = None,
    samples: int = 41,
) -> AssumptionReport:
    """
    Sample the growth conditions on F and g over a rectangle.

    The result is advisory: a condition that holds on every sample is
    reported VERIFIED-ON-BOX, otherwise UNVERIFIED.

    Args:
        spec: Network
        box: [[c_lo, c_hi], [d_lo, d_hi]] with positive extent
        rho_c: Radius in the C coordinate beyond which F must be negative
            (defaults to the midpoint of the C range)
        c_bar: Bound on |y1| for the linear-growth fit of |g| (defaults to c_hi)
        samples: Sample points per axis

    Returns:
        AssumptionReport
    """
    (c_lo, c_hi), (d_lo, d_hi) = box
    if not (c_hi > c_lo and d_hi > d_lo):
        raise ValueError("assumption box must have positive extent")
    rho_c = 0.5 * (c_lo + c_hi) if rho_c is None else float(rho_c)
    c_bar = c_hi if c_bar is None else float(c_bar)

    c_axis = np.linspace(c_lo, c_hi, samples)
    d_axis = np.linspace(d_lo, d_hi, samples)
    yc, yd = np.meshgrid(c_axis, d_axis, indexing="ij")

    f_axis = fast_drift(spec, np.zeros_like(d_axis), d_axis)
    c1_min = float(f_axis.min())

    outside = yc > rho_c
    if np.any(outside):
        c2_max = float(fast_drift(spec, yc[outside], yd[outside]).max())
        c2_ok = c2_max < 0.0
    else:
        c2_max, c2_ok = None, False

    within = np.abs(yc) <= c_bar
    g_abs = np.abs(slow_drift(spec, yc[within], yd[within]))
    m1 = float(np.max(g_abs / (np.abs(yd[within]) + 1.0))) if g_abs.size else 0.0

    return AssumptionReport(
        box=[[float(c_lo), float(c_hi)], [float(d_lo), float(d_hi)]],
        samples_per_axis=samples,
        c1_min_f_on_axis=c1_min,
        c1_status="VERIFIED-ON-BOX" if c1_min >= 0.0 else "UNVERIFIED",
        rho_c=rho_c,
        c2_max_f_outside=c2_max,
        c2_status="VERIFIED-ON-BOX" if c2_ok else "UNVERIFIED",
        c_bar=c_bar,
        m1_estimate=m1,
        d2_status="VERIFIED-ON-BOX" if math.isfinite(m1) else "UNVERIFIED",
    )
