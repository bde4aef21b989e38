"""Debit and amplitude calculus, exact jump moments and the generator oracle"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy

from msrd.config import settings
from msrd.schemas.network import NetworkSpec, Reaction, ReactionClass, ScalingParams
from msrd.services.grid import (
    GridFunction,
    PairField,
    Profile,
    discrete_laplacian,
    project_pn,
    sample_points,
)
from msrd.services.model import (
    eval_rate_array,
    fast_drift,
    kernel_antiderivative,
    kernel_eval,
    kernel_l2_squared,
    kernel_peak,
    kernel_weights,
    limit_convolution_matrix,
    theta_array,
)
from msrd.utils.expressions import parse_profile, profile_function

GAUSS_NODES = 8
CONVOLUTION_PANELS = 128


class ChannelGuardExceeded(ValueError):
    """Raised when exhaustive enumeration would visit too many channels"""


class NetworkCalculus:
    """
    Network compiled against a lattice: kernel weights, jump bases and rates.

    Jump matrices are indexed [target i, source j]; column j is the
    increment applied when the reaction fires at source site j.
    """

    def __init__(self, spec: NetworkSpec, scaling: ScalingParams):
        self.spec = spec
        self.scaling = scaling
        self.n = scaling.n_sites
        self.mu = float(scaling.mu)
        self.gamma = kernel_weights(spec.kernel, scaling)
        self.fast: List[Reaction] = spec.by_class(ReactionClass.FAST_C, ReactionClass.FAST_MIXED)
        self.slow: List[Reaction] = spec.by_class(ReactionClass.SLOW_MIXED, ReactionClass.SLOW_D)
        self.base_c = [r.gamma_c / self.mu * self.gamma for r in self.slow]
        self.base_d = [r.gamma_d * self.gamma for r in self.slow]

    # -- rates ---------------------------------------------------------------

    def fast_rates(self, uc: np.ndarray, ud: np.ndarray) -> List[np.ndarray]:
        """lambda_r(u_j) per fast reaction (without the mu factor)"""
        return [eval_rate_array(r.rate, uc, ud) for r in self.fast]

    def slow_rates(self, uc: np.ndarray, ud: np.ndarray) -> List[np.ndarray]:
        return [eval_rate_array(r.rate, uc, ud) for r in self.slow]

    def total_rate(self, uc: np.ndarray, ud: np.ndarray) -> float:
        fast = sum(float(np.sum(rates)) for rates in self.fast_rates(uc, ud))
        diffusion = 2.0 * self.n * self.n * float(np.sum(uc))
        slow = sum(float(np.sum(rates)) for rates in self.slow_rates(uc, ud))
        return self.mu * (fast + diffusion) + slow

    # -- correlated jumps ----------------------------------------------------

    def gates(self, k: int, uc: np.ndarray, ud: np.ndarray) -> np.ndarray:
        """theta_ij for slow reaction k; only species the reaction changes are gated"""
        reaction = self.slow[k]
        theta = self.spec.theta
        gate = np.ones((self.n, self.n))
        if reaction.gamma_c != 0:
            gate = gate * theta_array(theta, uc[:, None] + self.base_c[k])
        if reaction.gamma_d != 0:
            gate = gate * theta_array(theta, ud[:, None] + self.base_d[k])
        return gate

    def slow_jumps(self, k: int, uc: np.ndarray, ud: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gate = self.gates(k, uc, ud)
        return self.base_c[k] * gate, self.base_d[k] * gate

    def slow_jump_column(self, k: int, uc: np.ndarray, ud: np.ndarray, j: int):
        """Increments (jump_C, jump_D) when slow reaction k fires at source site j"""
        reaction = self.slow[k]
        theta = self.spec.theta
        col_c = self.base_c[k][:, j]
        col_d = self.base_d[k][:, j]
        gate = np.ones(self.n)
        if reaction.gamma_c != 0:
            gate = gate * theta_array(theta, uc + col_c)
        if reaction.gamma_d != 0:
            gate = gate * theta_array(theta, ud + col_d)
        return col_c * gate, col_d * gate

    # -- first and second jump moments -------------------------------------

    def fast_debit(self, uc: np.ndarray, ud: np.ndarray) -> np.ndarray:
        return fast_drift(self.spec, uc, ud)

    def slow_debits(self, uc: np.ndarray, ud: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(F1^N, G^N) site values"""
        f1 = np.zeros(self.n)
        gn = np.zeros(self.n)
        for k, rates in enumerate(self.slow_rates(uc, ud)):
            jc, jd = self.slow_jumps(k, uc, ud)
            if self.slow[k].gamma_c != 0:
                f1 += jc @ rates
            gn += jd @ rates
        return f1, gn

    def drift(self, uc: np.ndarray, ud: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Psi^N = (Delta_N u_C + F + F1^N, G^N)"""
        f1, gn = self.slow_debits(uc, ud)
        return self.laplacian(uc) + self.fast_debit(uc, ud) + f1, gn

    def truncated_field(self, uc: np.ndarray, ud: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(Delta_N u_C + F(u), G^N(u)), the flow followed after truncation"""
        _, gn = self.slow_debits(uc, ud)
        return self.laplacian(uc) + self.fast_debit(uc, ud), gn

    def covariance(self, uc: np.ndarray, ud: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Exact jump covariances (K_C, K_D), K = sum over channels of rate * delta delta^T"""
        _, _, k_c, k_d = self.moments(uc, ud)
        return k_c, k_d

    def moments(self, uc: np.ndarray, ud: np.ndarray):
        """
        First and second jump moments in one pass over the slow reactions.

        Returns:
            (psi_c, psi_d, K_C, K_D)
        """
        n, mu = self.n, self.mu
        psi_c = self.laplacian(uc) + self.fast_debit(uc, ud)
        psi_d = np.zeros(n)
        k_c = np.zeros((n, n))
        k_d = np.zeros((n, n))

        fast_sq = np.zeros(n)
        for reaction, rates in zip(self.fast, self.fast_rates(uc, ud)):
            fast_sq += reaction.gamma_c ** 2 * rates
        diagonal = fast_sq / mu

        if n > 1:
            scale = n * n / mu
            diagonal = diagonal + scale * (np.roll(uc, 1) + 2.0 * uc + np.roll(uc, -1))
            index = np.arange(n)
            upper = (index + 1) % n
            pair = scale * (uc + uc[upper])
            np.add.at(k_c, (np.concatenate([index, upper]), np.concatenate([upper, index])), -np.concatenate([pair, pair]))
        k_c[np.diag_indices(n)] += diagonal

        for k, rates in enumerate(self.slow_rates(uc, ud)):
            jc, jd = self.slow_jumps(k, uc, ud)
            if self.slow[k].gamma_c != 0:
                psi_c += jc @ rates
                k_c += (jc * rates) @ jc.T
            psi_d += jd @ rates
            k_d += (jd * rates) @ jd.T
        return psi_c, psi_d, k_c, k_d

    def laplacian(self, uc: np.ndarray) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1)
        return discrete_laplacian(GridFunction(uc)).values


# ---------------------------------------------------------------------------
# Debit functions
# ---------------------------------------------------------------------------

def debit_F(spec: NetworkSpec, u: PairField) -> GridFunction:
    """F(u) evaluated sitewise"""
    return GridFunction(fast_drift(spec, u.u_c.values, u.u_d.values))


def debit_F1N(spec: NetworkSpec, scaling: ScalingParams, u: PairField) -> GridFunction:
    """Slow contribution to C, carrying the explicit 1/mu factor"""
    f1, _ = NetworkCalculus(spec, scaling).slow_debits(u.u_c.values, u.u_d.values)
    return GridFunction(f1)


def debit_GN(spec: NetworkSpec, scaling: ScalingParams, u: PairField) -> GridFunction:
    """Kernel-weighted, gated slow debit of D"""
    _, gn = NetworkCalculus(spec, scaling).slow_debits(u.u_c.values, u.u_d.values)
    return GridFunction(gn)


ClosedFormPair = Tuple[Profile, Profile]


def debit_G(
    spec: NetworkSpec,
    u: Union[PairField, ClosedFormPair],
    points: Optional[np.ndarray] = None,
) -> Union[GridFunction, np.ndarray]:
    """
    Continuum slow debit G(u)(x) = sum_r gamma_r^D theta_r(u(x)) (a * lambda_r(u))(x).

    Args:
        spec: Network
        u: Step-function state, or a pair of closed-form profiles
        points: Evaluation points; for a PairField without points the site
            averages P_N G(u) are returned

    Returns:
        GridFunction of site averages, or values at ``points``
    """
    slow = spec.by_class(ReactionClass.SLOW_MIXED, ReactionClass.SLOW_D)

    if isinstance(u, PairField):
        uc, ud = u.u_c.values, u.u_d.values
        if points is None:
            w = limit_convolution_matrix(spec.kernel, u.n_sites)
            total = np.zeros(u.n_sites)
            for reaction in slow:
                conv = w @ eval_rate_array(reaction.rate, uc, ud)
                total += reaction.gamma_d * continuum_gate(spec, reaction, uc, ud) * conv
            return GridFunction(total)
        points = np.asarray(points, dtype=float)
        n = u.n_sites
        edges = np.arange(n + 1, dtype=float) / n
        # cell k contributes A(x - (k-1)/N) - A(x - k/N)
        cell_weight = (
            kernel_antiderivative(spec.kernel, points[:, None] - edges[None, :-1])
            - kernel_antiderivative(spec.kernel, points[:, None] - edges[None, 1:])
        )
        uc_x = sample_points(u.u_c, points)
        ud_x = sample_points(u.u_d, points)
        total = np.zeros(points.size)
        for reaction in slow:
            conv = cell_weight @ eval_rate_array(reaction.rate, uc, ud)
            total += reaction.gamma_d * continuum_gate(spec, reaction, uc_x, ud_x) * conv
        return total

    f_c, f_d = (_as_callable(profile, spec) for profile in u)
    if points is None:
        points = np.linspace(0.0, 1.0, 257)
    points = np.asarray(points, dtype=float)
    y, weights = _convolution_nodes(spec, points)
    yc, yd = f_c(y), f_d(y)
    uc_x, ud_x = f_c(points), f_d(points)
    kernel_values = kernel_eval(spec.kernel, points[:, None] - y)
    total = np.zeros(points.size)
    for reaction in slow:
        integrand = eval_rate_array(reaction.rate, yc, yd)
        conv = np.sum(weights * integrand * kernel_values, axis=1)
        total += reaction.gamma_d * continuum_gate(spec, reaction, uc_x, ud_x) * conv
    return total


def continuum_gate(spec: NetworkSpec, reaction: Reaction, uc, ud) -> np.ndarray:
    gate = np.ones(np.shape(uc))
    if reaction.gamma_c != 0:
        gate = gate * theta_array(spec.theta, uc)
    if reaction.gamma_d != 0:
        gate = gate * theta_array(spec.theta, ud)
    return gate


def _as_callable(profile: Profile, spec: NetworkSpec) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(profile, (int, float)):
        profile = repr(float(profile))
    if isinstance(profile, str):
        return profile_function(parse_profile(profile, spec.initial.constants))
    if isinstance(profile, sympy.Basic):
        return profile_function(profile)
    return profile


def _convolution_nodes(spec: NetworkSpec, points: np.ndarray):
    """Gauss nodes in y per point, split where a(x - y) jumps"""
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    base = np.linspace(0.0, 1.0, CONVOLUTION_PANELS + 1)
    if spec.kernel.variant == "TableLookup":
        m = len(spec.kernel.table)
        breaks = (points[:, None] - np.arange(m)[None, :] / m) % 1.0
        edges = np.sort(np.concatenate([np.broadcast_to(base, (points.size, base.size)), breaks], axis=1), axis=1)
    else:
        edges = np.broadcast_to(base, (points.size, base.size))
    left, right = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (right - left)
    y = (left + half)[:, :, None] + half[:, :, None] * nodes[None, None, :]
    w = half[:, :, None] * weights[None, None, :]
    return y.reshape(points.size, -1), w.reshape(points.size, -1)


# ---------------------------------------------------------------------------
# Amplitudes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DebitBundle:
    """Debit and square-amplitude fields at one state"""
    F: GridFunction
    F1N: GridFunction
    GN: GridFunction
    G: GridFunction
    psi_c: GridFunction
    psi_d: GridFunction
    sq_delta: GridFunction
    sq_F: GridFunction
    sq_F1N: GridFunction
    sq_g: np.ndarray
    sq_GN: GridFunction

    def fields(self) -> Dict[str, GridFunction]:
        return {
            name: getattr(self, name)
            for name in ("F", "F1N", "GN", "G", "psi_c", "psi_d", "sq_delta", "sq_F", "sq_F1N", "sq_GN")
        }


def square_amplitudes(spec: NetworkSpec, scaling: ScalingParams, u: PairField) -> DebitBundle:
    """
    Debit fields and their square-amplitude companions.

    Slow amplitudes are indexed by the source site j and summed over targets i,
    following the displayed amplitude formulas.

    Args:
        spec: Network
        scaling: Lattice and population scale
        u: State

    Returns:
        DebitBundle
    """
    calc = NetworkCalculus(spec, scaling)
    uc, ud = u.u_c.values, u.u_d.values
    n = calc.n
    f = calc.fast_debit(uc, ud)
    f1, gn = calc.slow_debits(uc, ud)
    psi_c, psi_d = calc.drift(uc, ud)

    sq_delta = n * n * (np.roll(uc, 1) + 2.0 * uc + np.roll(uc, -1))
    sq_f = np.zeros(n)
    for reaction, rates in zip(calc.fast, calc.fast_rates(uc, ud)):
        sq_f += reaction.gamma_c ** 2 * rates

    sq_f1 = np.zeros(n)
    sq_g = np.zeros((n, n))
    for k, rates in enumerate(calc.slow_rates(uc, ud)):
        reaction = calc.slow[k]
        gate_sq = calc.gates(k, uc, ud) ** 2
        if reaction.reaction_class == ReactionClass.SLOW_MIXED:
            sq_f1 += (reaction.gamma_c ** 2 / calc.mu ** 2) * np.sum(calc.gamma ** 2 * gate_sq, axis=0) * rates
        sq_g += reaction.gamma_d ** 2 * gate_sq * rates[None, :]
    sq_gn = np.sum(calc.gamma ** 2 * sq_g, axis=0)

    return DebitBundle(
        F=GridFunction(f),
        F1N=GridFunction(f1),
        GN=GridFunction(gn),
        G=debit_G(spec, u),
        psi_c=GridFunction(psi_c),
        psi_d=GridFunction(psi_d),
        sq_delta=GridFunction(sq_delta),
        sq_F=GridFunction(sq_f),
        sq_F1N=GridFunction(sq_f1),
        sq_g=sq_g,
        sq_GN=GridFunction(sq_gn),
    )


def total_rate(spec: NetworkSpec, scaling: ScalingParams, u: PairField) -> float:
    """Total jump intensity lambda^N(u)"""
    rate = NetworkCalculus(spec, scaling).total_rate(u.u_c.values, u.u_d.values)
    if not np.isfinite(rate):
        raise ArithmeticError(f"non-finite total rate {rate}")
    return rate


# ---------------------------------------------------------------------------
# Generator oracle
# ---------------------------------------------------------------------------

class LinearFunctional:
    """phi(u) = <u_C, w_c>_2 + <u_D, w_d>_2"""

    def __init__(self, w_c: np.ndarray, w_d: np.ndarray):
        self.w_c = np.asarray(w_c, dtype=float)
        self.w_d = np.asarray(w_d, dtype=float)

    def __call__(self, uc: np.ndarray, ud: np.ndarray) -> float:
        n = uc.size
        return float(np.dot(uc, self.w_c) + np.dot(ud, self.w_d)) / n


class SquaredLinearFunctional(LinearFunctional):
    """phi(u) = (<u_C, w_c>_2 + <u_D, w_d>_2)^2"""

    def __call__(self, uc: np.ndarray, ud: np.ndarray) -> float:
        return super().__call__(uc, ud) ** 2


class HalfSquaredNorm:
    """phi(u) = (||u_C||_2^2 + ||u_D||_2^2) / 2"""

    def __call__(self, uc: np.ndarray, ud: np.ndarray) -> float:
        return 0.5 * float(np.dot(uc, uc) + np.dot(ud, ud)) / uc.size


TestFunctional = Callable[[np.ndarray, np.ndarray], float]


def enumerate_channels(calc: NetworkCalculus, uc: np.ndarray, ud: np.ndarray):
    """
    Yield (class label, rate, jump_C, jump_D) for every channel.

    Jumps are dense length-N arrays.
    """
    n, mu = calc.n, calc.mu
    fast_rates = calc.fast_rates(uc, ud)
    slow_rates = calc.slow_rates(uc, ud)
    for j in range(n):
        for reaction, rates in zip(calc.fast, fast_rates):
            jump_c = np.zeros(n)
            jump_c[j] = reaction.gamma_c / mu
            yield reaction.reaction_class.value, mu * rates[j], jump_c, np.zeros(n)
        for shift in (-1, 1):
            jump_c = np.zeros(n)
            jump_c[j] -= 1.0 / mu
            jump_c[(j + shift) % n] += 1.0 / mu
            yield "Diffusion", mu * n * n * uc[j], jump_c, np.zeros(n)
        for k, rates in enumerate(slow_rates):
            jump_c, jump_d = calc.slow_jump_column(k, uc, ud, j)
            yield calc.slow[k].reaction_class.value, rates[j], jump_c, jump_d


def generator_apply(
    spec: NetworkSpec,
    scaling: ScalingParams,
    u: PairField,
    phi: TestFunctional,
) -> float:
    """
    Exact generator value L phi(u) by exhaustive channel enumeration.

    Args:
        spec: Network
        scaling: Lattice and population scale
        u: State
        phi: Test functional taking (u_C values, u_D values)

    Returns:
        sum over channels of rate * (phi(u + jump) - phi(u))
    """
    calc = NetworkCalculus(spec, scaling)
    n_channels = calc.n * (len(calc.fast) + 2 + len(calc.slow))
    if n_channels > settings.MAX_CHANNELS_ENUMERATED:
        raise ChannelGuardExceeded(f"{n_channels} channels exceed the enumeration guard")
    uc, ud = u.u_c.values, u.u_d.values
    base = phi(uc, ud)
    total = 0.0
    for _, rate, jump_c, jump_d in enumerate_channels(calc, uc, ud):
        if rate != 0.0:
            total += rate * (phi(uc + jump_c, ud + jump_d) - base)
    return total


def order2_terms(spec: NetworkSpec, scaling: ScalingParams, u: PairField) -> Dict[str, float]:
    """
    Second-order generator contributions for phi = ||u||_2^2 / 2, split by channel class.

    Returns:
        Dict with keys fast, diffusion, slow_c, slow_d, slow_d_trace, trace_bound
    """
    calc = NetworkCalculus(spec, scaling)
    uc, ud = u.u_c.values, u.u_d.values
    n = calc.n
    terms = {"fast": 0.0, "diffusion": 0.0, "slow_c": 0.0, "slow_d": 0.0}
    for label, rate, jump_c, jump_d in enumerate_channels(calc, uc, ud):
        half_c = 0.5 * float(np.dot(jump_c, jump_c)) / n
        half_d = 0.5 * float(np.dot(jump_d, jump_d)) / n
        if label in (ReactionClass.FAST_C.value, ReactionClass.FAST_MIXED.value):
            terms["fast"] += rate * half_c
        elif label == "Diffusion":
            terms["diffusion"] += rate * half_c
        else:
            terms["slow_c"] += rate * half_c
            terms["slow_d"] += rate * half_d
    terms["slow_d_trace"] = 2.0 * n * terms["slow_d"]
    bound = 0.0
    for reaction, rates in zip(calc.slow, calc.slow_rates(uc, ud)):
        bound += float(np.max(rates)) * reaction.gamma_d ** 2 * kernel_l2_squared(spec.kernel)
    terms["trace_bound"] = bound
    return terms


# ---------------------------------------------------------------------------
# Convergence and Lipschitz diagnostics
# ---------------------------------------------------------------------------

def gn_convergence_errors(
    spec: NetworkSpec,
    profiles: ClosedFormPair,
    n_values: Sequence[int],
    mu_factor: float = 4.0,
    nodes_per_site: int = 4,
) -> List[float]:
    """
    ||G^N(P_N u) - P_N G(u)||_inf for a smooth closed-form state.

    P_N G(u) is computed by Gauss quadrature of the exact-kernel convolution
    inside every site.

    Args:
        spec: Network
        profiles: (v_C, v_D) closed forms
        n_values: Lattice sizes
        mu_factor: Population scale used for the gates (mu = factor * N)
        nodes_per_site: Gauss nodes per site for the projection of G

    Returns:
        One sup-norm error per N
    """
    nodes, weights = np.polynomial.legendre.leggauss(nodes_per_site)
    errors = []
    for n in n_values:
        scaling = ScalingParams(n_sites=n, mu=max(1.0, mu_factor * n))
        u = PairField(
            project_pn(profiles[0], n, spec.initial.constants),
            project_pn(profiles[1], n, spec.initial.constants),
        )
        gn = debit_GN(spec, scaling, u).values
        left = np.arange(n) / n
        x = left[:, None] + 0.5 / n * (nodes[None, :] + 1.0)
        g_values = debit_G(spec, profiles, x.ravel()).reshape(n, nodes_per_site)
        projected = 0.5 * g_values @ weights
        errors.append(float(np.max(np.abs(gn - projected))))
    return errors


def sampled_lipschitz(
    evaluate: Callable[[PairField], np.ndarray],
    states: Sequence[PairField],
    perturbations: Sequence[PairField],
) -> float:
    """Largest ratio ||E(u) - E(v)||_inf / ||u - v||_{inf,inf} over sampled pairs"""
    ratio = 0.0
    for u, v in zip(states, perturbations):
        distance = u.distance(v)
        if distance > 0:
            diff = np.max(np.abs(np.asarray(evaluate(u)) - np.asarray(evaluate(v))))
            ratio = max(ratio, float(diff) / distance)
    return ratio


def kernel_jump_bounds(spec: NetworkSpec, scaling: ScalingParams) -> Tuple[float, float]:
    """
    Admissible sup-norm jump sizes (C, D) along a trajectory.

    Returns:
        (max(1, fast gamma_C, slow gamma_C a(0) / N) / mu, slow gamma_D a(0) / N)
    """
    peak = kernel_peak(spec.kernel)
    n = scaling.n_sites
    fast = spec.by_class(ReactionClass.FAST_C, ReactionClass.FAST_MIXED)
    slow = spec.by_class(ReactionClass.SLOW_MIXED, ReactionClass.SLOW_D)
    bound_c = max([1.0] + [abs(r.gamma_c) for r in fast] + [abs(r.gamma_c) * peak / n for r in slow])
    bound_d = max([0.0] + [abs(r.gamma_d) * peak / n for r in slow])
    return bound_c / scaling.mu, bound_d
