"""Periodic step functions on N sites: projection, stencils and semigroups"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from scipy.linalg import expm

from msrd.utils.expressions import exact_antiderivative, parse_profile, profile_function

QUADRATURE_PANELS = 64
QUADRATURE_NODES = 6
QUADRATURE_TOL = 1e-10

Profile = Union[str, sympy.Expr, Callable[[np.ndarray], np.ndarray], np.ndarray]


class GridMismatchError(ValueError):
    """Raised when grid functions live on incompatible lattices"""


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Step function on N sites; values[j] is the value on I_{j+1}"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("grid function needs a non-empty 1-D value array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_sites(self) -> int:
        return self.values.size

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def inner(self, other: "GridFunction") -> float:
        """<f, g>_2 = N^-1 sum f_j g_j"""
        _check_same_grid(self, other)
        return float(np.dot(self.values, other.values)) / self.n_sites

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.values - other.values)

    def scaled(self, factor: float) -> "GridFunction":
        return GridFunction(factor * self.values)

    @classmethod
    def constant(cls, n_sites: int, value: float = 0.0) -> "GridFunction":
        return cls(np.full(n_sites, float(value)))

    @classmethod
    def indicator(cls, n_sites: int, site: int) -> "GridFunction":
        """The step function 1_j (0-based site index)"""
        values = np.zeros(n_sites)
        values[site % n_sites] = 1.0
        return cls(values)


@dataclass(frozen=True, eq=False)
class PairField:
    """State of both species on a common lattice"""
    u_c: GridFunction
    u_d: GridFunction

    def __post_init__(self):
        _check_same_grid(self.u_c, self.u_d)

    @property
    def n_sites(self) -> int:
        return self.u_c.n_sites

    def norm(self) -> float:
        """||(f1, f2)||_{inf,inf} = ||f1||_inf + ||f2||_inf"""
        return self.u_c.sup_norm() + self.u_d.sup_norm()

    def distance(self, other: "PairField") -> float:
        return PairField(self.u_c - other.u_c, self.u_d - other.u_d).norm()

    def is_nonnegative(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.u_c.values >= -tol) and np.all(self.u_d.values >= -tol))

    @classmethod
    def from_arrays(cls, u_c, u_d) -> "PairField":
        return cls(GridFunction(u_c), GridFunction(u_d))


def _check_same_grid(f: GridFunction, g: GridFunction):
    if f.n_sites != g.n_sites:
        raise GridMismatchError(f"grid sizes differ: {f.n_sites} vs {g.n_sites}")


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def project_pn(
    f: Profile,
    n_sites: int,
    constants: Optional[Dict[str, float]] = None,
) -> GridFunction:
    """
    Project a profile on [0, 1] to site averages u_j = N * integral over I_j of f.

    Args:
        f: Closed-form expression (string or sympy), vectorised callable,
            or fine-grid cell averages whose length is a multiple of N
        n_sites: Target number of sites
        constants: Named constants for string expressions

    Returns:
        Projected GridFunction
    """
    if isinstance(f, np.ndarray):
        return block_average(GridFunction(f), n_sites)

    if isinstance(f, str):
        f = parse_profile(f, constants)

    edges = np.arange(n_sites + 1, dtype=float) / n_sites
    if isinstance(f, sympy.Expr):
        primitive = exact_antiderivative(f)
        if primitive is not None:
            values = n_sites * np.diff(primitive(edges))
            if np.all(np.isfinite(values)):
                return GridFunction(values)
        f = profile_function(f)

    values = _composite_gauss(f, n_sites, QUADRATURE_PANELS)
    check = _composite_gauss(f, n_sites, 2 * QUADRATURE_PANELS)
    if np.max(np.abs(values - check)) > QUADRATURE_TOL * max(1.0, np.max(np.abs(check))):
        from msrd.services.run_logger import run_logger

        run_logger.warning(
            "Projection quadrature above tolerance",
            context={"n_sites": n_sites, "difference": float(np.max(np.abs(values - check)))},
        )
    return GridFunction(check)


def _composite_gauss(f: Callable, n_sites: int, panels: int) -> np.ndarray:
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    h = 1.0 / (n_sites * panels)
    left = np.arange(n_sites * panels) * h
    points = left[:, None] + 0.5 * h * (nodes[None, :] + 1.0)
    samples = np.asarray(f(points), dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("profile has non-finite samples on [0, 1]")
    panel_integrals = 0.5 * h * samples @ weights
    return n_sites * panel_integrals.reshape(n_sites, panels).sum(axis=1)


def block_average(f: GridFunction, n_sites: int) -> GridFunction:
    """P_N of a finer step function whose size is a multiple of N"""
    if f.n_sites % n_sites:
        raise GridMismatchError(f"{f.n_sites} sites cannot be averaged onto {n_sites}")
    return GridFunction(f.values.reshape(n_sites, -1).mean(axis=1))


def sample_points(f: GridFunction, x) -> np.ndarray:
    """Evaluate the step function at points of the periodic interval"""
    x = np.asarray(x, dtype=float)
    n = f.n_sites
    # I_j = ((j-1)/N, j/N]  ->  0-based index ceil(x N) - 1
    index = (np.ceil((x - np.floor(x)) * n).astype(int) - 1) % n
    return f.values[index]


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------

def discrete_laplacian(f: GridFunction) -> GridFunction:
    """Delta_N f = N^2 (f_{j-1} - 2 f_j + f_{j+1}) with periodic wrap"""
    v = f.values
    n = f.n_sites
    return GridFunction(n * n * (np.roll(v, 1) - 2.0 * v + np.roll(v, -1)))


def discrete_gradients(f: GridFunction) -> Tuple[GridFunction, GridFunction]:
    """Forward and backward periodic differences"""
    v = f.values
    n = f.n_sites
    forward = n * (np.roll(v, -1) - v)
    backward = n * (v - np.roll(v, 1))
    return GridFunction(forward), GridFunction(backward)


def laplacian_matrix(n_sites: int) -> np.ndarray:
    eye = np.eye(n_sites)
    return n_sites * n_sites * (np.roll(eye, 1, axis=0) - 2.0 * eye + np.roll(eye, -1, axis=0))


# ---------------------------------------------------------------------------
# Spectral basis and semigroups
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """
    Eigenpairs of Delta_N.

    Columns of ``vectors`` are the basis elements sampled at sites j = 1..N,
    orthonormal for <f, g>_2 = N^-1 sum f_j g_j.
    """
    n_sites: int
    modes: Tuple[int, ...]
    kinds: Tuple[str, ...]
    vectors: np.ndarray
    betas: np.ndarray
    _cache: Dict[float, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.modes)

    def element(self, k: int) -> GridFunction:
        return GridFunction(self.vectors[:, k])

    def distinct_betas(self) -> List[Tuple[int, float]]:
        """(m, beta_m) once per mode index m"""
        seen: Dict[int, float] = {}
        for m, beta in zip(self.modes, self.betas):
            seen.setdefault(m, float(beta))
        return sorted(seen.items())

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return self.vectors.T @ values / self.n_sites

    def gram(self) -> np.ndarray:
        return self.vectors.T @ self.vectors / self.n_sites

    def semigroup_matrix(self, t: float) -> np.ndarray:
        """Dense T_N(t) acting on site values"""
        if t < 0:
            raise ValueError(f"semigroup time must be >= 0, got {t}")
        key = float(t)
        matrix = self._cache.get(key)
        if matrix is None:
            matrix = (self.vectors * np.exp(-self.betas * t)) @ self.vectors.T / self.n_sites
            if len(self._cache) < 64:
                self._cache[key] = matrix
        return matrix


@lru_cache(maxsize=32)
def spectral_basis(n_sites: int) -> SpectralBasis:
    """
    Orthonormal eigenbasis of Delta_N using the even-m enumeration.

    Args:
        n_sites: Number of sites N

    Returns:
        SpectralBasis with N elements
    """
    n = n_sites
    j = np.arange(1, n + 1, dtype=float)
    modes: List[int] = [0]
    kinds: List[str] = ["const"]
    columns: List[np.ndarray] = [np.ones(n)]
    for m in range(2, n, 2):
        modes += [m, m]
        kinds += ["cos", "sin"]
        columns.append(math.sqrt(2.0) * np.cos(math.pi * m * j / n))
        columns.append(math.sqrt(2.0) * np.sin(math.pi * m * j / n))
    if n % 2 == 0 and n >= 2:
        modes.append(n)
        kinds.append("edge")
        columns.append(np.cos(math.pi * j))
    betas = np.array([2.0 * n * n * (1.0 - math.cos(math.pi * m / n)) for m in modes])
    # beta_0 is exactly zero
    betas[0] = 0.0
    return SpectralBasis(
        n_sites=n,
        modes=tuple(modes),
        kinds=tuple(kinds),
        vectors=np.column_stack(columns),
        betas=betas,
    )


def semigroup_apply(basis: SpectralBasis, t: float, f: GridFunction) -> GridFunction:
    """
    Apply T_N(t) = exp(t Delta_N) through the spectral expansion.

    Args:
        basis: Spectral basis on the lattice of f
        t: Time (>= 0)
        f: Grid function

    Returns:
        T_N(t) f
    """
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    if basis.n_sites != f.n_sites:
        raise GridMismatchError("basis and function live on different lattices")
    coefficients = basis.coefficients(f.values) * np.exp(-basis.betas * t)
    return GridFunction(basis.vectors @ coefficients)


def heat_reference(t: float, mode: int) -> float:
    """Decay factor of cos(2 pi m x) under the continuous heat semigroup"""
    return math.exp(-4.0 * math.pi ** 2 * mode ** 2 * t)


def h_n(basis: SpectralBasis, t: float) -> float:
    """h_N(t) = 1 + 4 sum_{m>0} exp(-2 beta_m t) (beta_m + 1)"""
    return 1.0 + 4.0 * sum(
        math.exp(-2.0 * beta * t) * (beta + 1.0) for m, beta in basis.distinct_betas() if m > 0
    )


def h_n_integral(basis: SpectralBasis, t: float) -> float:
    """Exact integral of h_N over [0, t]"""
    total = t
    for m, beta in basis.distinct_betas():
        if m > 0:
            total += 4.0 * (beta + 1.0) * (1.0 - math.exp(-2.0 * beta * t)) / (2.0 * beta)
    return total


def gradient_energy(basis: SpectralBasis, t: float, site: int) -> float:
    """<(grad+ T f)^2 + (grad- T f)^2 + (T f)^2, 1>_2 for f = N 1_j"""
    f = GridFunction.indicator(basis.n_sites, site).scaled(basis.n_sites)
    tf = semigroup_apply(basis, t, f)
    forward, backward = discrete_gradients(tf)
    ones = GridFunction.constant(basis.n_sites, 1.0)
    squares = GridFunction(forward.values ** 2 + backward.values ** 2 + tf.values ** 2)
    return squares.inner(ones)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

SNAPSHOT_HEADER = np.dtype("<i8")
SNAPSHOT_VALUES = np.dtype("<f8")


def snapshot_bytes(f: GridFunction) -> bytes:
    """Compact binary form: N as little-endian int64, then N little-endian float64 values"""
    return np.array([f.n_sites], dtype=SNAPSHOT_HEADER).tobytes() + f.values.astype(SNAPSHOT_VALUES).tobytes()


def snapshot_from_bytes(data: bytes) -> GridFunction:
    n = int(np.frombuffer(data[:8], dtype=SNAPSHOT_HEADER)[0])
    values = np.frombuffer(data[8:8 + 8 * n], dtype=SNAPSHOT_VALUES)
    if values.size != n:
        raise ValueError(f"snapshot declares {n} sites but holds {values.size} values")
    return GridFunction(values)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def empirical_order(n_values: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of -log(error) against log(N)"""
    slope = np.polyfit(np.log(np.asarray(n_values, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)[0]
    return float(-slope)


def semigroup_convergence_errors(
    n_values: Sequence[int],
    mode: int = 1,
    t_values: Optional[Sequence[float]] = None,
) -> List[float]:
    """
    sup over t of ||T_N(t) P_N f - P_N T(t) f||_inf for f = cos(2 pi m x).

    P_N T(t) f = heat_reference(t, m) P_N f, so both sides live on the lattice.
    """
    t_values = np.linspace(0.0, 1.0, 101) if t_values is None else np.asarray(t_values, dtype=float)
    profile = f"cos(2*pi*{mode}*x)"
    errors = []
    for n in n_values:
        basis = spectral_basis(n)
        projected = project_pn(profile, n)
        worst = 0.0
        for t in t_values:
            discrete = semigroup_apply(basis, float(t), projected)
            exact = projected.scaled(heat_reference(float(t), mode))
            worst = max(worst, (discrete - exact).sup_norm())
        errors.append(worst)
    return errors


def spectral_report(
    n_sites: int,
    t_values: Sequence[float] = (0.001, 0.01, 0.1, 1.0),
    seed: int = 0,
    samples: int = 8,
) -> Dict[str, float]:
    """
    Measured deviations for the lattice identities of Delta_N and T_N.

    Args:
        n_sites: Lattice size (>= 2)
        t_values: Times for the semigroup properties
        seed: Seed for the random test functions
        samples: Random functions per property

    Returns:
        Dict of worst deviations (0 means exact) plus the h_N ratio
    """
    if n_sites < 2:
        raise ValueError("spectral checks need at least two sites")
    basis = spectral_basis(n_sites)
    rng = np.random.default_rng(seed)
    lap = laplacian_matrix(n_sites)

    eigen = 0.0
    for k in range(basis.size):
        phi = basis.vectors[:, k]
        residual = lap @ phi + basis.betas[k] * phi
        eigen = max(eigen, float(np.max(np.abs(residual))) / max(basis.betas[k], 1.0))
    gram = float(np.max(np.abs(basis.gram() - np.eye(basis.size))))

    contraction = positivity = adjoint = commute = symmetry = exponential = 0.0
    for _ in range(samples):
        f = GridFunction(rng.normal(size=n_sites))
        g = GridFunction(rng.normal(size=n_sites))
        adjoint = max(adjoint, abs(discrete_laplacian(f).inner(g) - f.inner(discrete_laplacian(g))))
        forward, _ = discrete_gradients(f)
        _, backward = discrete_gradients(g)
        adjoint = max(adjoint, abs(forward.inner(g) + f.inner(backward)))
        positive = GridFunction(np.abs(f.values))
        for t in t_values:
            tf = semigroup_apply(basis, t, f)
            contraction = max(contraction, tf.sup_norm() - f.sup_norm())
            positivity = max(positivity, -float(np.min(semigroup_apply(basis, t, positive).values)))
            commute = max(commute, (discrete_laplacian(tf) - semigroup_apply(basis, t, discrete_laplacian(f))).sup_norm()
                          / max(1.0, discrete_laplacian(f).sup_norm()))
    for t in t_values:
        matrix = basis.semigroup_matrix(t)
        symmetry = max(symmetry, float(np.max(np.abs(matrix - matrix.T))))
        exponential = max(exponential, float(np.max(np.abs(matrix - expm(t * lap)))))

    h_excess = -math.inf
    for t in t_values:
        bound = h_n(basis, t)
        for site in range(n_sites):
            h_excess = max(h_excess, gradient_energy(basis, t, site) - bound)
    horizon = float(max(t_values))
    return {
        "n_sites": n_sites,
        "eigen_residual": eigen,
        "gram_deviation": gram,
        "adjoint_deviation": adjoint,
        "contraction_excess": max(contraction, 0.0),
        "positivity_excess": max(positivity, 0.0),
        "commutation_deviation": commute,
        "symmetry_deviation": symmetry,
        "expm_deviation": exponential,
        "h_bound_excess": h_excess,
        "h_integral_ratio": (h_n_integral(basis, horizon) - horizon) / n_sites,
    }
