import pytest

from msrd.schemas.network import (
    InitialCondition,
    Kernel,
    Monomial,
    NetworkSpec,
    PolynomialRate,
    Reaction,
    ReactionClass,
    SmoothingTheta,
)
from msrd.services.documents import load_network_file


def _reaction(cls: ReactionClass, gamma_c: int = 0, gamma_d: int = 0, terms=((1.0, 0, 0),), name: str = ""):
    return Reaction(
        name=name,
        reaction_class=cls,
        gamma_c=gamma_c,
        gamma_d=gamma_d,
        rate=PolynomialRate(terms=[Monomial(coefficient=c, e_c=a, e_d=b) for c, a, b in terms]),
    )


@pytest.fixture
def make_reaction():
    return _reaction


@pytest.fixture(scope="session")
def reference_spec() -> NetworkSpec:
    return load_network_file()


@pytest.fixture
def pure_death_spec() -> NetworkSpec:
    """Single SlowD death at rate u_D with indicator gating"""
    return NetworkSpec(
        name="pure-death",
        reactions=[_reaction(ReactionClass.SLOW_D, gamma_d=-1, terms=((1.0, 0, 1),), name="death")],
        kernel=Kernel(variant="ConstantBox"),
        theta=SmoothingTheta(kind="indicator"),
        initial=InitialCondition(v0_c="0", v0_d="1"),
    )


@pytest.fixture
def linear_c_spec() -> NetworkSpec:
    """C birth at rate 1 and death at rate u_C"""
    return NetworkSpec(
        name="linear-c",
        reactions=[
            _reaction(ReactionClass.FAST_C, gamma_c=1, name="birth"),
            _reaction(ReactionClass.FAST_C, gamma_c=-1, terms=((1.0, 1, 0),), name="death"),
        ],
        kernel=Kernel(variant="ConstantBox"),
        initial=InitialCondition(v0_c="1", v0_d="0"),
    )


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")
