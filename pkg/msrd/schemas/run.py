"""Run configuration, sweep plans and report schemas"""
import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from msrd.config import settings


class SchedulePair(BaseModel):
    """One (N, mu) point of a convergence schedule"""
    n_sites: int = Field(..., description="Number of sites N", ge=1)
    mu: float = Field(..., description="Population scale", ge=1.0)

    class Config:
        frozen = True


DEFAULT_SCHEDULE = [
    SchedulePair(n_sites=8, mu=32),
    SchedulePair(n_sites=16, mu=64),
    SchedulePair(n_sites=32, mu=128),
]


class RunConfig(BaseModel):
    """Everything a subcommand needs; embedded verbatim in its artifacts"""
    network: Optional[str] = Field(None, description="Network document path (bundled reference network if unset)")
    n_sites: int = Field(8, description="Number of sites N", ge=1)
    mu: float = Field(32.0, description="Population scale", ge=1.0)
    t_end: float = Field(1.0, description="Horizon T", gt=0)
    dt: Optional[float] = Field(None, description="Initial limit-solver step (settings.LIMIT_DT if unset)", gt=0)
    epsilon0: Optional[float] = Field(None, description="Truncation radius; unset disables truncation", ge=0)
    replicas: int = Field(20, description="Replicas per (N, mu) pair", ge=1)
    martingale_replicas: int = Field(200, description="Replicas for the martingale suite", ge=2)
    schedule: List[SchedulePair] = Field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    n_ref: int = Field(256, description="Reference resolution for the refined limit", ge=1)
    seed: int = Field(default_factory=lambda: settings.SEED)
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)
    formats: Literal["csv", "json", "both"] = "both"
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)
    max_events: int = Field(default_factory=lambda: settings.MAX_EVENTS, ge=0)
    sample_points: int = Field(default_factory=lambda: settings.SAMPLE_POINTS, ge=2)
    track_martingales: bool = False
    record_events: bool = False
    plot_data: bool = False

    class Config:
        frozen = True
        json_schema_extra = {
            "example": {
                "n_sites": 8,
                "mu": 32,
                "t_end": 1.0,
                "replicas": 20,
                "schedule": [{"n_sites": 8, "mu": 32}, {"n_sites": 16, "mu": 64}],
                "seed": 20240917,
                "formats": "both",
            }
        }


class SweepPlan(BaseModel):
    """Convergence schedule along log(N) / mu -> 0"""
    pairs: List[SchedulePair] = Field(..., min_length=1)
    replicas: int = Field(20, ge=1)
    t_end: float = Field(1.0, gt=0)
    seed: int = Field(default_factory=lambda: settings.SEED)
    epsilon_levels: List[float] = Field(default_factory=lambda: list(settings.EPSILON_LEVELS))
    epsilon0: Optional[float] = Field(None, ge=0, description="Tube radius whose exit time is reported")
    sample_points: int = Field(default_factory=lambda: settings.SAMPLE_POINTS, ge=200)
    n_ref: int = Field(256, ge=1)
    network: str = "network"

    class Config:
        frozen = True

    @model_validator(mode="after")
    def schedule_decreasing(self):
        ratios = [math.log(p.n_sites) / p.mu for p in self.pairs]
        for k in range(1, len(self.pairs)):
            if not ratios[k] < ratios[k - 1]:
                first, second = self.pairs[k - 1], self.pairs[k]
                raise ValueError(
                    f"log(N)/mu must strictly decrease: ({first.n_sites}, {first.mu}) -> "
                    f"({second.n_sites}, {second.mu}) gives {ratios[k - 1]:.6g} -> {ratios[k]:.6g}"
                )
        return self


class ReplicaResult(BaseModel):
    """One stochastic run compared to the limit"""
    index: int
    seed: int
    success: bool = True
    error: Optional[str] = None
    sup_error: Optional[float] = Field(None, description="sup_t ||u^N - v^N||_{inf,inf}")
    sup_error_ref: Optional[float] = Field(None, description="sup_t ||u^N - P_N v^{N_ref}||_{inf,inf}")
    tau: Optional[float] = Field(None, description="First exit time of the epsilon0 tube (None: never)")
    events: Dict[str, int] = Field(default_factory=dict)
    martingales: Dict[str, List[float]] = Field(default_factory=dict)


class PairSummary(BaseModel):
    """Aggregates for one (N, mu) pair"""
    n_sites: int
    mu: float
    replicas: int
    failures: int
    median_error: Optional[float]
    quantiles: Dict[str, float] = Field(default_factory=dict)
    exceedance: Dict[str, float] = Field(default_factory=dict, description="epsilon -> P{sup error > epsilon}")
    tau_fraction: Optional[float] = Field(None, description="Fraction of replicas with tau < T")
    limit_error: Optional[float] = Field(None, description="sup_t ||v^N - P_N v^{N_ref}||_{inf,inf}")
    decomposition_ok: Optional[bool] = None


class MartingaleStat(BaseModel):
    """Monte Carlo mean of one compensated statistic"""
    identity: str
    component: int
    mean: float
    std_error: float
    z: float
    samples: int = Field(0, description="Replicas the mean is taken over")
    failures: int = Field(0, description="Replicas dropped because their run failed")


class CheckResult(BaseModel):
    """Outcome of one acceptance criterion"""
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    details: Dict[str, object] = Field(default_factory=dict)


class LimitBoundsReport(BaseModel):
    """A posteriori check of the limit bounds, with both readings of the C cap"""
    rho_c: float
    rho_d: float
    m1: float
    kernel_peak: float
    max_c: float
    max_d: float
    c_cap_rho_c: float = Field(..., description="(rho_C + 1) / 2")
    c_cap_rho_max: float = Field(..., description="(max(rho_C, rho_D) + 1) / 2")
    c_cap_ok_rho_c: bool
    c_cap_ok_rho_max: bool
    d_envelope_excess: float = Field(..., description="max_t ||v_D(t)||_inf - (rho_D + 1) exp(a(0) M1 t)")
    d_envelope_ok: bool


class ExperimentReport(BaseModel):
    """Deterministic outcome of a sweep or martingale suite"""
    tool_version: str = Field(default_factory=lambda: settings.VERSION)
    config: Dict[str, object] = Field(default_factory=dict)
    plan: Optional[SweepPlan] = None
    pairs: List[PairSummary] = Field(default_factory=list)
    replicas: Dict[str, List[ReplicaResult]] = Field(default_factory=dict, description="'N,mu' -> replica results")
    martingales: List[MartingaleStat] = Field(default_factory=list)
    checks: List[CheckResult] = Field(default_factory=list)
    schedule_note: str = "default schedule uses mu = 4N"
