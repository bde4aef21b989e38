"""Reaction network schemas"""
from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class ReactionClass(str, Enum):
    """Timescale/species class of a reaction"""
    FAST_C = "FastC"
    FAST_MIXED = "FastMixed"
    SLOW_MIXED = "SlowMixed"
    SLOW_D = "SlowD"

    @property
    def is_fast(self) -> bool:
        return self in (ReactionClass.FAST_C, ReactionClass.FAST_MIXED)


class Monomial(BaseModel):
    """Single term c * u_C^e_c * u_D^e_d of a rate polynomial"""
    coefficient: float = Field(..., description="Term coefficient")
    e_c: int = Field(0, description="Exponent of u_C", ge=0)
    e_d: int = Field(0, description="Exponent of u_D", ge=0)

    class Config:
        frozen = True

    @property
    def is_constant(self) -> bool:
        return self.e_c == 0 and self.e_d == 0


class PolynomialRate(BaseModel):
    """Polynomial reaction rate lambda_r(u_C, u_D)"""
    terms: List[Monomial] = Field(default_factory=list, description="Monomial terms")

    class Config:
        frozen = True

    @property
    def depends_on_c(self) -> bool:
        return any(term.e_c > 0 and term.coefficient != 0 for term in self.terms)

    @property
    def depends_on_d(self) -> bool:
        return any(term.e_d > 0 and term.coefficient != 0 for term in self.terms)


class Reaction(BaseModel):
    """Classified reaction with integer stoichiometry on C and D"""
    name: str = Field("", description="Human readable label")
    reaction_class: ReactionClass = Field(..., alias="class")
    gamma_c: int = Field(0, description="Net change of C molecules")
    gamma_d: int = Field(0, description="Net change of D molecules")
    rate: PolynomialRate

    class Config:
        frozen = True
        populate_by_name = True


class Kernel(BaseModel):
    """1-periodic even correlation kernel a(x) with its maximum at 0"""
    variant: Literal["ConstantBox", "RaisedCosine", "TableLookup"] = "ConstantBox"
    table: Optional[List[float]] = Field(
        None, description="Cell values on M equal cells of [0, 1) (TableLookup only)"
    )

    class Config:
        frozen = True


class SmoothingTheta(BaseModel):
    """Positivity gate for correlated jumps"""
    kind: Literal["smoothstep", "indicator"] = "smoothstep"

    class Config:
        frozen = True


class SpeciesLabels(BaseModel):
    c: str = "C"
    d: str = "D"

    class Config:
        frozen = True


class InitialCondition(BaseModel):
    """Closed-form initial profiles in x on [0, 1]"""
    v0_c: str = Field("1", description="Expression for v0^C(x)")
    v0_d: str = Field("0", description="Expression for v0^D(x)")
    constants: Dict[str, float] = Field(default_factory=dict, description="Named constants")

    class Config:
        frozen = True


class NetworkSpec(BaseModel):
    """Complete two-species multiscale reaction network"""
    name: str = "network"
    species: SpeciesLabels = Field(default_factory=SpeciesLabels)
    reactions: List[Reaction] = Field(default_factory=list)
    kernel: Kernel = Field(default_factory=Kernel)
    theta: SmoothingTheta = Field(default_factory=SmoothingTheta)
    initial: InitialCondition = Field(default_factory=InitialCondition)

    class Config:
        frozen = True
        json_schema_extra = {
            "example": {
                "name": "birth-death",
                "species": {"c": "C", "d": "D"},
                "reactions": [
                    {
                        "name": "birth",
                        "class": "FastC",
                        "gamma_c": 1,
                        "gamma_d": 0,
                        "rate": {"terms": [{"coefficient": 1.0, "e_c": 0, "e_d": 0}]},
                    }
                ],
                "kernel": {"variant": "RaisedCosine"},
                "theta": {"kind": "smoothstep"},
                "initial": {"v0_c": "1 + A*cos(2*pi*x)", "v0_d": "2", "constants": {"A": 0.5}},
            }
        }

    def by_class(self, *classes: ReactionClass) -> List[Reaction]:
        return [r for r in self.reactions if r.reaction_class in classes]


class ScalingParams(BaseModel):
    """Lattice size N and population scale mu"""
    n_sites: int = Field(..., description="Number of sites N (1 is the degenerate ring)", ge=1)
    mu: float = Field(..., description="Population scale of the abundant species", ge=1.0)

    class Config:
        frozen = True


class AssumptionReport(BaseModel):
    """Advisory result of sampling the growth conditions on a box"""
    box: List[List[float]] = Field(..., description="[[c_lo, c_hi], [d_lo, d_hi]]")
    samples_per_axis: int
    c1_min_f_on_axis: float = Field(..., description="min F(0, y2) over sampled y2")
    c1_status: Literal["VERIFIED-ON-BOX", "UNVERIFIED"]
    rho_c: float
    c2_max_f_outside: Optional[float] = Field(None, description="max F over sampled y1 > rho_c")
    c2_status: Literal["VERIFIED-ON-BOX", "UNVERIFIED"]
    c_bar: float
    m1_estimate: float = Field(..., description="Fitted M1(c_bar) with |g(y)| <= M1 (|y2| + 1)")
    d2_status: Literal["VERIFIED-ON-BOX", "UNVERIFIED"]
