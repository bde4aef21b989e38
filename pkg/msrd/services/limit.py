"""Deterministic limit: the spatially discretized PDE-ODE system and its refinement"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from msrd.config import settings
from msrd.schemas.network import NetworkSpec, ReactionClass
from msrd.schemas.run import LimitBoundsReport
from msrd.services.debit import ClosedFormPair, continuum_gate
from msrd.services.grid import GridMismatchError, PairField, SpectralBasis, project_pn, spectral_basis
from msrd.services.model import eval_rate_array, fast_drift, kernel_peak, limit_convolution_matrix
from msrd.services.run_logger import run_logger

METHOD = "exponential-midpoint"


class RefinementError(RuntimeError):
    """Step halving did not reach the requested tolerance"""


@dataclass(eq=False)
class LimitSolution:
    """Path of the discretized limit v^N on a time grid"""
    n_sites: int
    times: np.ndarray
    v_c: np.ndarray
    v_d: np.ndarray
    dt: float
    method: str = METHOD
    halvings: int = 0
    converged: bool = True
    history: List[Dict[str, float]] = field(default_factory=list)
    min_value: float = 0.0
    negative_excursion: bool = False

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def max_c(self) -> float:
        return float(np.max(np.abs(self.v_c)))

    @property
    def max_d(self) -> float:
        return float(np.max(np.abs(self.v_d)))

    def snapshot(self, k: int) -> PairField:
        return PairField.from_arrays(self.v_c[k], self.v_d[k])

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Linear interpolation in time between grid points"""
        times = self.times
        if t <= times[0]:
            return self.v_c[0], self.v_d[0]
        if t >= times[-1]:
            return self.v_c[-1], self.v_d[-1]
        k = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (
            (1.0 - w) * self.v_c[k] + w * self.v_c[k + 1],
            (1.0 - w) * self.v_d[k] + w * self.v_d[k + 1],
        )

    def metadata(self) -> Dict[str, object]:
        return {
            "n_sites": self.n_sites,
            "method": self.method,
            "dt": self.dt,
            "halvings": self.halvings,
            "converged": self.converged,
            "refinement": self.history,
            "max_c": self.max_c,
            "max_d": self.max_d,
            "min_value": self.min_value,
            "negative_excursion": self.negative_excursion,
        }


class LimitField:
    """R(v) = (F(v), P_N G(v)) on site values"""

    def __init__(self, spec: NetworkSpec, n_sites: int):
        self.spec = spec
        self.w = limit_convolution_matrix(spec.kernel, n_sites)
        self.slow = spec.by_class(ReactionClass.SLOW_MIXED, ReactionClass.SLOW_D)

    def __call__(self, vc: np.ndarray, vd: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        f = fast_drift(self.spec, vc, vd)
        g = np.zeros(vd.shape)
        for reaction in self.slow:
            conv = self.w @ eval_rate_array(reaction.rate, vc, vd)
            g += reaction.gamma_d * continuum_gate(self.spec, reaction, vc, vd) * conv
        return f, g


def _initial_state(spec: NetworkSpec, n_sites: int, v0) -> PairField:
    if v0 is None:
        v0 = (spec.initial.v0_c, spec.initial.v0_d)
    if isinstance(v0, PairField):
        if v0.n_sites != n_sites:
            raise GridMismatchError(f"initial state has {v0.n_sites} sites, expected {n_sites}")
        return v0
    return PairField(
        project_pn(v0[0], n_sites, spec.initial.constants),
        project_pn(v0[1], n_sites, spec.initial.constants),
    )


def _integrate(
    field_: LimitField,
    basis: SpectralBasis,
    v0: PairField,
    times: np.ndarray,
    dt: float,
) -> Tuple[np.ndarray, np.ndarray]:
    vc = np.array(v0.u_c.values)
    vd = np.array(v0.u_d.values)
    path_c = np.zeros((times.size, vc.size))
    path_d = np.zeros((times.size, vd.size))
    path_c[0], path_d[0] = vc, vd
    propagators: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}

    for k in range(1, times.size):
        span = times[k] - times[k - 1]
        if span > 0:
            substeps = max(1, math.ceil(span / dt - 1e-9))
            h = span / substeps
            key = round(h, 15)
            if key not in propagators:
                propagators[key] = (basis.semigroup_matrix(h), basis.semigroup_matrix(0.5 * h))
            full, half = propagators[key]
            for _ in range(substeps):
                rc, rd = field_(vc, vd)
                mid_c = half @ (vc + 0.5 * h * rc)
                mid_d = vd + 0.5 * h * rd
                rc, rd = field_(mid_c, mid_d)
                vc = full @ vc + h * (half @ rc)
                vd = vd + h * rd
        path_c[k], path_d[k] = vc, vd
    return path_c, path_d


def solve_discrete_limit(
    spec: NetworkSpec,
    n_sites: int,
    v0: Union[PairField, ClosedFormPair, None] = None,
    t_end: float = 1.0,
    dt: Optional[float] = None,
    sample_times: Optional[Sequence[float]] = None,
    tol: Optional[float] = None,
    max_halvings: Optional[int] = None,
    strict: bool = False,
) -> LimitSolution:
    """
    Integrate dv/dt = (Delta_N v_C, 0) + R(v) in mild form.

    Each step is an exponential midpoint rule: the Laplacian block is
    propagated exactly through the spectral semigroup, the D block has the
    identity semigroup. The step is halved until two successive solutions
    agree to ``tol`` in the sup norm on the sample grid.

    Args:
        spec: Network
        n_sites: Lattice size N (>= 2)
        v0: Initial site values, closed-form pair, or None for the network's profiles
        t_end: Horizon
        dt: Initial step (settings.LIMIT_DT)
        sample_times: Output grid starting at 0 (uniform, settings.SAMPLE_POINTS)
        tol: Refinement tolerance (settings.LIMIT_TOL)
        max_halvings: Refinement budget (settings.LIMIT_MAX_HALVINGS)
        strict: Raise instead of warning when refinement does not converge

    Returns:
        LimitSolution from the finest step

    Raises:
        RefinementError: strict mode and the tolerance was not reached
    """
    if n_sites < 2:
        raise ValueError("the discretized limit needs at least two sites")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    tol = settings.LIMIT_TOL if tol is None else tol
    max_halvings = settings.LIMIT_MAX_HALVINGS if max_halvings is None else max_halvings
    dt = min(settings.LIMIT_DT if dt is None else dt, t_end)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    initial = _initial_state(spec, n_sites, v0)
    if not initial.is_nonnegative(settings.POSITIVITY_TOL):
        raise ValueError("initial state of the limit must be non-negative")

    if sample_times is None:
        times = np.linspace(0.0, t_end, settings.SAMPLE_POINTS)
    else:
        times = np.asarray(sample_times, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0) or times[-1] > t_end:
            raise ValueError("sample times must increase from 0 and stay within the horizon")

    field_ = LimitField(spec, n_sites)
    basis = spectral_basis(n_sites)
    path_c, path_d = _integrate(field_, basis, initial, times, dt)
    history: List[Dict[str, float]] = []
    converged = False
    halvings = 0
    while halvings < max_halvings:
        dt *= 0.5
        halvings += 1
        finer_c, finer_d = _integrate(field_, basis, initial, times, dt)
        difference = float(np.max(
            np.max(np.abs(finer_c - path_c), axis=1) + np.max(np.abs(finer_d - path_d), axis=1)
        ))
        history.append({"dt": dt, "difference": difference})
        path_c, path_d = finer_c, finer_d
        if difference < tol:
            converged = True
            break

    if not converged:
        message = f"step refinement stopped at dt={dt:.3g} above tolerance {tol:.1e}"
        if strict:
            raise RefinementError(message)
        run_logger.warning(message, context={"n_sites": n_sites, "history": history})

    min_value = float(min(path_c.min(), path_d.min()))
    negative = min_value < -settings.NEGATIVITY_TOL
    if negative:
        run_logger.warning(
            "Negative excursion in the discretized limit",
            context={"n_sites": n_sites, "min_value": min_value},
        )

    return LimitSolution(
        n_sites=n_sites,
        times=times,
        v_c=path_c,
        v_d=path_d,
        dt=dt,
        halvings=halvings,
        converged=converged,
        history=history,
        min_value=min_value,
        negative_excursion=negative,
    )


def block_average_rows(values: np.ndarray, n_sites: int) -> np.ndarray:
    """P_N applied to the last axis of a fine-grid array"""
    fine = values.shape[-1]
    if fine % n_sites:
        raise GridMismatchError(f"{fine} sites cannot be averaged onto {n_sites}")
    return values.reshape(values.shape[:-1] + (n_sites, fine // n_sites)).mean(axis=-1)


def limit_error(coarse: LimitSolution, reference: LimitSolution) -> float:
    """
    sup over the coarse sample times of ||v^N(t) - P_N v^{N_ref}(t)||_{inf,inf}.

    Raises:
        GridMismatchError: when N does not divide N_ref
    """
    if reference.n_sites % coarse.n_sites:
        raise GridMismatchError(
            f"reference resolution {reference.n_sites} is not a multiple of {coarse.n_sites}"
        )
    if reference.t_end < coarse.t_end - 1e-12:
        raise ValueError("reference horizon is shorter than the coarse horizon")
    worst = 0.0
    for k, t in enumerate(coarse.times):
        ref_c, ref_d = reference.at(float(t))
        error = (
            np.max(np.abs(coarse.v_c[k] - block_average_rows(ref_c, coarse.n_sites)))
            + np.max(np.abs(coarse.v_d[k] - block_average_rows(ref_d, coarse.n_sites)))
        )
        worst = max(worst, float(error))
    return worst


def discretization_errors(
    spec: NetworkSpec,
    n_values: Sequence[int],
    n_ref: int = 256,
    t_end: float = 1.0,
    reference: Optional[LimitSolution] = None,
) -> Tuple[List[float], LimitSolution]:
    """limit_error of the discretized limit at each N against one refined surrogate"""
    reference = reference or solve_discrete_limit(spec, n_ref, t_end=t_end)
    errors = [
        limit_error(solve_discrete_limit(spec, n, t_end=t_end, sample_times=reference.times), reference)
        for n in n_values
    ]
    return errors, reference


def check_limit_bounds(
    solution: LimitSolution,
    spec: NetworkSpec,
    rho_c: float,
    rho_d: float,
    m1: float,
) -> LimitBoundsReport:
    """
    Compare the computed path with the a priori caps.

    The C cap is reported under both readings of its radius, rho_C alone and
    max(rho_C, rho_D); the D envelope is (rho_D + 1) exp(a(0) M1 t).
    """
    peak = kernel_peak(spec.kernel)
    cap_c = 0.5 * (rho_c + 1.0)
    cap_max = 0.5 * (max(rho_c, rho_d) + 1.0)
    envelope = (rho_d + 1.0) * np.exp(peak * m1 * solution.times)
    excess = float(np.max(np.max(np.abs(solution.v_d), axis=1) - envelope))
    return LimitBoundsReport(
        rho_c=rho_c,
        rho_d=rho_d,
        m1=m1,
        kernel_peak=peak,
        max_c=solution.max_c,
        max_d=solution.max_d,
        c_cap_rho_c=cap_c,
        c_cap_rho_max=cap_max,
        c_cap_ok_rho_c=solution.max_c <= cap_c,
        c_cap_ok_rho_max=solution.max_c <= cap_max,
        d_envelope_excess=excess,
        d_envelope_ok=excess <= 0.0,
    )
