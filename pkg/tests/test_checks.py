import pytest

from msrd.schemas.network import ScalingParams
from msrd.services.checks import convergence_checks, jump_bound_check, spectral_checks

SCALING = ScalingParams(n_sites=8, mu=32)


class TestJumpBounds:
    def test_admissible_jumps(self, reference_spec):
        result = jump_bound_check(reference_spec, SCALING, 1.0 / 32, 0.25)
        assert result.passed
        assert result.details["bound_c"] == pytest.approx(1.0 / 32)
        assert result.details["bound_d"] == pytest.approx(0.25)

    def test_oversized_d_jump(self, reference_spec):
        result = jump_bound_check(reference_spec, SCALING, 0.0, 0.26)
        assert not result.passed

    def test_oversized_c_jump(self, reference_spec):
        assert not jump_bound_check(reference_spec, SCALING, 1.0 / 16, 0.0).passed


def test_spectral_checks_pass():
    reports, checks = spectral_checks([3, 4])
    assert len(reports) == 2
    failed = [c.name for c in checks if not c.passed]
    assert failed == []
    assert checks[-1].name == "h_integral_constant"


@pytest.mark.slow
def test_convergence_checks(reference_spec):
    checks = convergence_checks(reference_spec)
    assert [c.name for c in checks] == [
        "semigroup_convergence",
        "discretization_convergence",
        "gn_convergence",
        "order2_fast_vs_mu",
        "order2_diffusion_vs_n",
        "order2_slow_d_trace_vs_n",
    ]
    for check in checks:
        assert check.passed, (check.name, check.details)
