"""Compensated jump statistics accumulated along a trajectory"""
from typing import Dict, Optional

import numpy as np

from msrd.services.debit import NetworkCalculus
from msrd.services.grid import SpectralBasis, spectral_basis


def default_test_functions(n_sites: int) -> np.ndarray:
    """
    Test functions for the projected quadratic variations.

    Rows are N 1_j for every site, followed by sqrt(2) cos(2 pi x) and
    sqrt(2) sin(2 pi x) sampled on the lattice when N >= 3.
    """
    functions = [n_sites * np.eye(n_sites)]
    if n_sites >= 3:
        basis = spectral_basis(n_sites)
        smooth = [k for k, m in enumerate(basis.modes) if m == 2]
        functions.append(basis.vectors[:, smooth].T)
    return np.vstack(functions)


class MartingaleTracker:
    """
    Running jump sums and compensator integrals for the accompanying martingales.

    The state is constant between events, so every compensator integral is
    accumulated exactly as density * elapsed time. After ``freeze`` nothing
    changes, which gives the stopped statistics at t ^ tau.
    """

    def __init__(
        self,
        calc: NetworkCalculus,
        t_bar: float,
        test_functions: Optional[np.ndarray] = None,
        basis: Optional[SpectralBasis] = None,
    ):
        n = calc.n
        self.calc = calc
        self.n = n
        self.t_bar = float(t_bar)
        self.test_functions = default_test_functions(n) if test_functions is None else np.atleast_2d(np.asarray(test_functions, dtype=float))
        self.basis = basis or spectral_basis(n)
        self.frozen = False

        self.t = 0.0
        self.u0_c = np.zeros(n)
        self.u0_d = np.zeros(n)

        self.drift_c = np.zeros(n)
        self.drift_d = np.zeros(n)
        self.jumps_sq_c = np.zeros(n)
        self.jumps_cross_c = np.zeros(n)
        self.jumps_sq_d = np.zeros(n)
        self.jumps_phi_c = np.zeros(len(self.test_functions))
        self.jumps_phi_d = np.zeros(len(self.test_functions))
        self.jumps_reversed_c = np.zeros(n)
        self.jumps_reversed_sq_c = np.zeros(n)

        self.comp_sq_c = np.zeros(n)
        self.comp_cross_c = np.zeros(n)
        self.comp_sq_d = np.zeros(n)
        self.comp_phi_c = np.zeros(len(self.test_functions))
        self.comp_phi_d = np.zeros(len(self.test_functions))
        self.comp_reversed_c = np.zeros(n)
        self.comp_reversed_sq_c = np.zeros(n)

        self._moments = None
        self._stopped = None

    def start(self, t: float, uc: np.ndarray, ud: np.ndarray):
        self.t = float(t)
        self.u0_c = np.array(uc, dtype=float)
        self.u0_d = np.array(ud, dtype=float)
        self._refresh(uc, ud)

    def _refresh(self, uc: np.ndarray, ud: np.ndarray):
        self._moments = self.calc.moments(np.asarray(uc, dtype=float), np.asarray(ud, dtype=float))

    def advance(self, t: float):
        """Integrate the compensator densities of the current state up to time t"""
        if self.frozen or t <= self.t:
            return
        dt = t - self.t
        psi_c, psi_d, k_c, k_d = self._moments
        n = self.n

        self.drift_c += dt * psi_c
        self.drift_d += dt * psi_d
        self.comp_sq_c += dt * np.diag(k_c)
        self.comp_cross_c += dt * k_c[np.arange(n), (np.arange(n) + 1) % n]
        self.comp_sq_d += dt * np.diag(k_d)
        phi = self.test_functions
        self.comp_phi_c += dt * np.einsum("pi,ij,pj->p", phi, k_c, phi) / n ** 2
        self.comp_phi_d += dt * np.einsum("pi,ij,pj->p", phi, k_d, phi) / n ** 2

        if self.t < self.t_bar:
            self._advance_reversed(min(t, self.t_bar), psi_c, k_c)
        self.t = float(t)

    def _advance_reversed(self, t_end: float, psi_c: np.ndarray, k_c: np.ndarray):
        # weights of T_N(t_bar - s) integrated over [self.t, t_end]
        basis = self.basis
        e, beta = basis.vectors, basis.betas
        n = self.n
        dt = t_end - self.t
        lag = self.t_bar - t_end

        single = _decay_integral(beta, lag, dt)
        self.comp_reversed_c += e @ (single * (e.T @ psi_c)) / n

        pair = beta[:, None] + beta[None, :]
        weights = _decay_integral(pair, lag, dt)
        coefficients = e.T @ k_c @ e / n ** 2
        self.comp_reversed_sq_c += np.einsum("jm,mk,jk->j", e, coefficients * weights, e)

    def jump(self, jump_c: np.ndarray, jump_d: np.ndarray, uc: np.ndarray, ud: np.ndarray):
        """
        Record one event at the current time.

        Args:
            jump_c: Dense increment of u_C
            jump_d: Dense increment of u_D
            uc: Post-jump u_C
            ud: Post-jump u_D
        """
        if self.frozen:
            return
        n = self.n
        self.jumps_sq_c += jump_c * jump_c
        self.jumps_cross_c += jump_c * np.roll(jump_c, -1)
        self.jumps_sq_d += jump_d * jump_d
        self.jumps_phi_c += (self.test_functions @ jump_c / n) ** 2
        self.jumps_phi_d += (self.test_functions @ jump_d / n) ** 2
        if self.t <= self.t_bar:
            reversed_jump = self.basis.semigroup_matrix(self.t_bar - self.t) @ jump_c
            self.jumps_reversed_c += reversed_jump
            self.jumps_reversed_sq_c += reversed_jump * reversed_jump
        self._refresh(uc, ud)

    def freeze(self, uc: np.ndarray, ud: np.ndarray):
        """Stop accumulating; the state given here is the one finish reports against"""
        self.frozen = True
        self._stopped = (np.array(uc, dtype=float), np.array(ud, dtype=float))

    def finish(self, uc: np.ndarray, ud: np.ndarray) -> Dict[str, np.ndarray]:
        """
        Terminal compensated values.

        Args:
            uc: u_C at the terminal time (ignored after freeze)
            ud: u_D at the terminal time (ignored after freeze)

        Returns:
            Statistic name -> array of components
        """
        if self._stopped is not None:
            uc, ud = self._stopped
        return {
            "Z_C": np.asarray(uc) - self.u0_c - self.drift_c,
            "Z_D": np.asarray(ud) - self.u0_d - self.drift_d,
            "Mg1": self.jumps_sq_c - self.comp_sq_c,
            "Mg2": self.jumps_cross_c - self.comp_cross_c,
            "Mg3": np.roll(self.jumps_cross_c - self.comp_cross_c, 1),
            "Mg4": self.jumps_sq_d - self.comp_sq_d,
            "Mg5": self.jumps_phi_c - self.comp_phi_c,
            "Mg6": self.jumps_phi_d - self.comp_phi_d,
            "Y_C": self.jumps_reversed_c - self.comp_reversed_c,
            "reversed_qv": self.jumps_reversed_sq_c - self.comp_reversed_sq_c,
        }


def _decay_integral(rate: np.ndarray, lag: float, dt: float) -> np.ndarray:
    """integral over s in [0, dt] of exp(-rate (lag + s)), elementwise"""
    rate = np.asarray(rate, dtype=float)
    out = np.full(rate.shape, float(dt))
    positive = rate > 0.0
    r = rate[positive]
    out[positive] = np.exp(-r * lag) * (-np.expm1(-r * dt)) / r
    return out
