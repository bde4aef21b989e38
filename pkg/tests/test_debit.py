import numpy as np
import pytest

from msrd.config import settings
from msrd.schemas.network import Kernel, NetworkSpec, ReactionClass, ScalingParams
from msrd.services.checks import gn_check, order2_checks
from msrd.services.debit import (
    ChannelGuardExceeded,
    HalfSquaredNorm,
    LinearFunctional,
    NetworkCalculus,
    SquaredLinearFunctional,
    debit_F,
    debit_F1N,
    debit_G,
    debit_GN,
    generator_apply,
    kernel_jump_bounds,
    order2_terms,
    sampled_lipschitz,
    square_amplitudes,
    total_rate,
)
from msrd.services.grid import GridFunction, PairField, project_pn
from msrd.services.model import kernel_peak, slow_drift

BOX = Kernel(variant="ConstantBox")


def _constant(n, c, d):
    return PairField(GridFunction.constant(n, c), GridFunction.constant(n, d))


def _projected(spec, n):
    return PairField(
        project_pn(spec.initial.v0_c, n, spec.initial.constants),
        project_pn(spec.initial.v0_d, n, spec.initial.constants),
    )


@pytest.fixture
def mixed_c_spec(make_reaction):
    """One slow reaction that moves both species"""
    return NetworkSpec(
        reactions=[make_reaction(ReactionClass.SLOW_MIXED, gamma_c=1, gamma_d=-1, terms=((0.5, 1, 1),))],
        kernel=BOX,
    )


class TestTotalRate:
    def test_zero_state(self, pure_death_spec):
        assert total_rate(pure_death_spec, ScalingParams(n_sites=3, mu=5), _constant(3, 0.0, 0.0)) == 0.0

    def test_birth_and_diffusion(self, make_reaction):
        spec = NetworkSpec(reactions=[make_reaction(ReactionClass.FAST_C, gamma_c=1)], kernel=BOX)
        u = PairField.from_arrays([0.5, 0.5], [0.0, 0.0])
        assert total_rate(spec, ScalingParams(n_sites=2, mu=10), u) == pytest.approx(100.0)

    def test_fast_block_is_linear_in_mu(self, reference_spec):
        u = _projected(reference_spec, 6)
        calc = NetworkCalculus(reference_spec, ScalingParams(n_sites=6, mu=10))
        slow = sum(float(r.sum()) for r in calc.slow_rates(u.u_c.values, u.u_d.values))
        low = total_rate(reference_spec, ScalingParams(n_sites=6, mu=10), u)
        high = total_rate(reference_spec, ScalingParams(n_sites=6, mu=20), u)
        assert high - slow == pytest.approx(2.0 * (low - slow), rel=1e-12)


class TestDebits:
    def test_birth_death_balance(self, make_reaction):
        spec = NetworkSpec(reactions=[
            make_reaction(ReactionClass.FAST_C, gamma_c=1),
            make_reaction(ReactionClass.FAST_C, gamma_c=-1, terms=((0.5, 1, 0),)),
        ])
        assert np.allclose(debit_F(spec, _constant(4, 2.0, 0.0)).values, 0.0)
        assert np.allclose(debit_F(spec, _constant(4, 0.0, 0.0)).values, 1.0)

    def test_no_fast_reactions(self, pure_death_spec):
        assert np.all(debit_F(pure_death_spec, _constant(3, 1.0, 1.0)).values == 0.0)

    def test_f1n_vanishes_without_c_change(self, reference_spec):
        f1 = debit_F1N(reference_spec, ScalingParams(n_sites=4, mu=16), _projected(reference_spec, 4))
        assert np.all(f1.values == 0.0)

    def test_f1n_constant_state(self, mixed_c_spec):
        u = _constant(4, 5.0, 5.0)
        f1 = debit_F1N(mixed_c_spec, ScalingParams(n_sites=4, mu=10), u)
        assert np.allclose(f1.values, 12.5 / 10.0, rtol=1e-12)

    def test_f1n_halves_with_mu(self, mixed_c_spec):
        u = _constant(4, 5.0, 5.0)
        low = debit_F1N(mixed_c_spec, ScalingParams(n_sites=4, mu=10), u).sup_norm()
        high = debit_F1N(mixed_c_spec, ScalingParams(n_sites=4, mu=20), u).sup_norm()
        assert high == pytest.approx(0.5 * low, rel=1e-12)

    def test_gn_on_constant_box_state(self, reference_spec):
        spec = reference_spec.model_copy(update={"kernel": BOX})
        gn = debit_GN(spec, ScalingParams(n_sites=4, mu=16), _constant(4, 1.0, 2.0))
        expected = float(slow_drift(spec, 1.0, 2.0))
        assert expected == pytest.approx(0.1)
        assert np.allclose(gn.values, expected, rtol=1e-12)

    def test_gn_without_slow_reactions(self, linear_c_spec):
        gn = debit_GN(linear_c_spec, ScalingParams(n_sites=3, mu=4), _constant(3, 1.0, 1.0))
        assert np.all(gn.values == 0.0)

    def test_gn_pure_death_at_zero(self, pure_death_spec):
        gn = debit_GN(pure_death_spec, ScalingParams(n_sites=3, mu=4), _constant(3, 1.0, 0.0))
        assert np.all(gn.values == 0.0)

    def test_g_of_constant_state(self, reference_spec):
        g = debit_G(reference_spec, _constant(8, 1.0, 2.0))
        assert np.allclose(g.values, 0.1, atol=1e-12)

    def test_g_of_closed_form_constant(self, reference_spec):
        values = debit_G(reference_spec, ("1", "2"), np.linspace(0.0, 1.0, 11))
        assert np.allclose(values, 0.1, atol=1e-8)

    def test_g_gated_at_zero_d(self, reference_spec):
        g = debit_G(reference_spec, _constant(8, 1.0, 0.0))
        assert np.all(g.values == 0.0)

    def test_gn_lipschitz_uniform_in_n(self, reference_spec):
        rng = np.random.default_rng(11)
        ratios = []
        for n in (8, 16, 32):
            scaling = ScalingParams(n_sites=n, mu=4 * n)
            states = [_projected(reference_spec, n) for _ in range(4)]
            moved = [
                PairField.from_arrays(
                    u.u_c.values + 1e-3 * rng.random(n),
                    u.u_d.values + 1e-3 * rng.random(n),
                )
                for u in states
            ]
            ratios.append(sampled_lipschitz(
                lambda u: debit_GN(reference_spec, scaling, u).values, states, moved,
            ))
        assert all(0.0 < r < 2.0 for r in ratios)

    def test_gn_converges_to_g(self, reference_spec):
        result = gn_check(reference_spec)
        assert result.passed, result.details


class TestSquareAmplitudes:
    def test_diffusion_amplitude(self, linear_c_spec):
        bundle = square_amplitudes(linear_c_spec, ScalingParams(n_sites=4, mu=8), _constant(4, 1.0, 0.0))
        assert np.allclose(bundle.sq_delta.values, 64.0)

    def test_zero_state(self, pure_death_spec):
        bundle = square_amplitudes(pure_death_spec, ScalingParams(n_sites=3, mu=5), _constant(3, 0.0, 0.0))
        for name, field in bundle.fields().items():
            assert np.all(field.values == 0.0), name

    def test_fields_finite_and_non_negative(self, reference_spec):
        bundle = square_amplitudes(reference_spec, ScalingParams(n_sites=8, mu=32), _projected(reference_spec, 8))
        for field in bundle.fields().values():
            assert np.all(np.isfinite(field.values))
        for name in ("sq_delta", "sq_F", "sq_F1N", "sq_GN"):
            assert np.all(getattr(bundle, name).values >= 0.0)

    def test_gn_amplitude_kernel_bound(self, reference_spec):
        n = 8
        bundle = square_amplitudes(reference_spec, ScalingParams(n_sites=n, mu=32), _projected(reference_spec, n))
        bound = (kernel_peak(reference_spec.kernel) / n) ** 2 * bundle.sq_g.sum(axis=0)
        assert np.all(bundle.sq_GN.values <= bound + 1e-12)

    def test_drift_composition(self, reference_spec):
        bundle = square_amplitudes(reference_spec, ScalingParams(n_sites=6, mu=24), _projected(reference_spec, 6))
        assert np.allclose(bundle.psi_d.values, bundle.GN.values)


class TestGenerator:
    SCALING = ScalingParams(n_sites=5, mu=10)

    @pytest.fixture
    def state(self):
        rng = np.random.default_rng(5)
        return PairField.from_arrays(1.0 + rng.random(5), 1.5 + rng.random(5))

    def test_constant_functional(self, reference_spec, state):
        assert generator_apply(reference_spec, self.SCALING, state, lambda uc, ud: 3.0) == 0.0

    def test_linear_functional_is_drift(self, reference_spec, state):
        rng = np.random.default_rng(6)
        w_c, w_d = rng.normal(size=5), rng.normal(size=5)
        value = generator_apply(reference_spec, self.SCALING, state, LinearFunctional(w_c, w_d))
        psi_c, psi_d = NetworkCalculus(reference_spec, self.SCALING).drift(state.u_c.values, state.u_d.values)
        expected = GridFunction(w_c).inner(GridFunction(psi_c)) + GridFunction(w_d).inner(GridFunction(psi_d))
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_mass_functional_ignores_diffusion(self, mixed_c_spec, state):
        ones = np.ones(5)
        value = generator_apply(mixed_c_spec, self.SCALING, state, LinearFunctional(ones, np.zeros(5)))
        bundle = square_amplitudes(mixed_c_spec, self.SCALING, state)
        expected = GridFunction(ones).inner(bundle.F + bundle.F1N)
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_quadratic_functional_second_order(self, reference_spec, state):
        n, site = 5, 1
        w = GridFunction.indicator(n, site).values
        phi = SquaredLinearFunctional(w, np.zeros(n))
        value = generator_apply(reference_spec, self.SCALING, state, phi)
        calc = NetworkCalculus(reference_spec, self.SCALING)
        psi_c, _ = calc.drift(state.u_c.values, state.u_d.values)
        level = LinearFunctional(w, np.zeros(n))(state.u_c.values, state.u_d.values)
        first_order = 2.0 * level * GridFunction(w).inner(GridFunction(psi_c))
        bundle = square_amplitudes(reference_spec, self.SCALING, state)
        mu = self.SCALING.mu
        density = (bundle.sq_delta.values[site] + bundle.sq_F.values[site] + mu * bundle.sq_F1N.values[site]) / mu
        assert value - first_order == pytest.approx(density / n ** 2, rel=1e-8)

    def test_half_squared_norm_is_drift_plus_order2(self, reference_spec, state):
        value = generator_apply(reference_spec, self.SCALING, state, HalfSquaredNorm())
        uc, ud = state.u_c.values, state.u_d.values
        psi_c, psi_d = NetworkCalculus(reference_spec, self.SCALING).drift(uc, ud)
        first_order = GridFunction(uc).inner(GridFunction(psi_c)) + GridFunction(ud).inner(GridFunction(psi_d))
        terms = order2_terms(reference_spec, self.SCALING, state)
        second_order = terms["fast"] + terms["diffusion"] + terms["slow_c"] + terms["slow_d"]
        assert second_order > 0
        assert value == pytest.approx(first_order + second_order, rel=1e-9)

    def test_channel_guard(self, reference_spec, state, monkeypatch):
        monkeypatch.setattr(settings, "MAX_CHANNELS_ENUMERATED", 10)
        with pytest.raises(ChannelGuardExceeded):
            generator_apply(reference_spec, self.SCALING, state, lambda uc, ud: 0.0)


class TestScaling:
    def test_order2_slopes(self, reference_spec):
        checks = order2_checks(reference_spec)
        assert [c.name for c in checks] == [
            "order2_fast_vs_mu", "order2_diffusion_vs_n", "order2_slow_d_trace_vs_n",
        ]
        for check in checks:
            assert check.passed, (check.name, check.value)

    def test_jump_bounds_reference(self, reference_spec):
        bound_c, bound_d = kernel_jump_bounds(reference_spec, ScalingParams(n_sites=8, mu=32))
        assert bound_c == pytest.approx(1.0 / 32)
        assert bound_d == pytest.approx(2.0 / 8)

    def test_jump_bounds_box(self, pure_death_spec):
        bound_c, bound_d = kernel_jump_bounds(pure_death_spec, ScalingParams(n_sites=4, mu=8))
        assert bound_c == pytest.approx(1.0 / 8)
        assert bound_d == pytest.approx(0.25)
