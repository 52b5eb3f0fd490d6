from __future__ import annotations
import enum
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, List, Dict, Optional, Protocol, TYPE_CHECKING

from utils.errors import DenominatorVanishing

if TYPE_CHECKING:
    from .mesh import TriMesh
    from .operators import GeometryCache


@dataclass
class PrimitiveSpec:
    # "icosphere" | "ellipsoid" | "dumbbell" | "torus" | "perturbed_icosphere"
    kind: str = "icosphere"
    level: int = 3
    radius: float = 1.0
    # Ellipsoid semi-axes
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    # Dumbbell
    bulb_radius: float = 1.0
    neck_radius: float = 0.2
    neck_length: float = 1.0
    # Dumbbell and torus angular resolution
    resolution: int = 32
    # Torus radii
    R: float = 2.0
    r: float = 1.0
    # Perturbed icosphere: max radial deviation as a fraction of radius
    amplitude: float = 0.05
    seed: int = 0

    def validate(self) -> List[str]:
        problems = []
        kind = self.kind.lower()
        if kind not in ("icosphere", "ellipsoid", "dumbbell", "torus", "perturbed_icosphere"):
            problems.append(f"unknown primitive kind '{self.kind}'")
            return problems
        if kind in ("icosphere", "ellipsoid", "perturbed_icosphere") and self.level < 0:
            problems.append("level must be >= 0")
        if kind in ("icosphere", "perturbed_icosphere") and not self.radius > 0:
            problems.append("radius must be > 0")
        if kind == "ellipsoid" and not min(self.a, self.b, self.c) > 0:
            problems.append("ellipsoid semi-axes must be > 0")
        if kind == "dumbbell":
            if not (self.bulb_radius > 0 and self.neck_radius > 0):
                problems.append("dumbbell radii must be > 0")
            elif not self.neck_radius < self.bulb_radius:
                problems.append("neck_radius must be < bulb_radius")
            if not self.neck_length > 0:
                problems.append("neck_length must be > 0")
        if kind == "torus" and not (self.R > 0 and self.r > 0):
            problems.append("torus radii must be > 0")
        if kind == "perturbed_icosphere" and not 0 <= self.amplitude < 1:
            problems.append("amplitude must be in [0, 1)")
        return problems


@dataclass
class ConstraintSpec:
    # "Zero" | "MeanH" | "AbsMeanH" | "GaussMixed" | "TimeFunction"
    kind: str = "Zero"
    # None: 1e-8 * surface_area / bbox_diagonal of the initial mesh
    denom_eps: Optional[float] = None
    # TimeFunction sources: inline expression in t, a (t, h) CSV, or inline samples
    expression: Optional[str] = None
    csv_path: Optional[str] = None
    samples: List[List[float]] = field(default_factory=list)
    # Sampled values above this magnitude count as unbounded
    bound_limit: float = 1e12

    def validate(self) -> List[str]:
        problems = []
        if self.kind not in CONSTRAINT_KINDS:
            problems.append(f"unknown constraint kind '{self.kind}'")
        if self.denom_eps is not None and not self.denom_eps > 0:
            problems.append("denom_eps must be > 0")
        if self.kind == "TimeFunction" and not (self.expression or self.csv_path or self.samples):
            problems.append("TimeFunction needs expression, csv_path or samples")
        return problems


CONSTRAINT_KINDS = ("Zero", "MeanH", "AbsMeanH", "GaussMixed", "TimeFunction")


@dataclass
class ConstraintValue:
    kind: str
    h: float
    numerator: float = 0.0
    denominator: float = 1.0
    # Units of h, numerator and denominator for the integral-quotient kinds
    units: str = "1/length^3"
    valid: bool = True

    @classmethod
    def quotient(cls, kind: str, numerator: float, denominator: float,
                 denom_eps: float, units: str = "1/length^3") -> 'ConstraintValue':
        if not math.isfinite(denominator) or abs(denominator) < denom_eps:
            raise DenominatorVanishing(kind, numerator, denominator, denom_eps)
        return cls(kind=kind, h=numerator / denominator, numerator=numerator,
                   denominator=denominator, units=units)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SchemeSpec:
    # "ExplicitEuler" | "SemiImplicit"
    kind: str = "SemiImplicit"
    dt_init: float = 1e-5
    dt_min: float = 1e-14
    dt_max: float = 1e-3
    safety: float = 0.5
    # Explicit stability constant: dt = safety * min_edge^4 / k4
    k4: float = 64.0
    adaptive: bool = True
    max_steps: int = 100000
    # Stop criteria
    t_end: float = 0.05
    min_edge_frac: float = 0.02  # NeckCollapse below this fraction of the initial mean edge
    max_curvature: float = 10.0  # CurvatureBlowup when max |A| * initial mean edge exceeds this
    on_denominator_failure: str = "stop"  # "stop" | "raise"
    # Tangential relaxation after each step, 0 disables it
    smooth_strength: float = 0.0

    def validate(self) -> List[str]:
        problems = []
        if self.kind not in ("ExplicitEuler", "SemiImplicit"):
            problems.append(f"unknown scheme kind '{self.kind}'")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            problems.append("require 0 < dt_min <= dt_init <= dt_max")
        if not self.safety > 0:
            problems.append("safety must be > 0")
        if not self.t_end > 0:
            problems.append("t_end must be > 0")
        if self.max_steps < 1:
            problems.append("max_steps must be >= 1")
        if not 0 <= self.smooth_strength <= 1:
            problems.append("smooth_strength must be in [0, 1]")
        if self.on_denominator_failure not in ("stop", "raise"):
            problems.append("on_denominator_failure must be 'stop' or 'raise'")
        return problems


@dataclass
class MonitorSpec:
    # 0 records a row after every step
    sample_interval: float = 0.0
    snapshot_times: List[float] = field(default_factory=list)
    # Snapshot every n steps, 0 disables
    snapshot_every: int = 0

    def validate(self) -> List[str]:
        problems = []
        if self.sample_interval < 0:
            problems.append("sample_interval must be >= 0")
        if any(t < 0 for t in self.snapshot_times):
            problems.append("snapshot_times must be >= 0")
        if self.snapshot_every < 0:
            problems.append("snapshot_every must be >= 0")
        return problems


@dataclass
class DiagnosticsSpec:
    rho_list: List[float] = field(default_factory=list)
    # None: half of the initial total curvature
    epsilon0: Optional[float] = None
    p: float = 2.0
    grid: int = 16
    checkers: List[str] = field(default_factory=lambda: ["topping", "michael_simon", "babyint", "covering"])

    def validate(self) -> List[str]:
        problems = []
        if any(not rho > 0 for rho in self.rho_list):
            problems.append("rho values must be > 0")
        if self.epsilon0 is not None and not self.epsilon0 > 0:
            problems.append("epsilon0 must be > 0")
        if not self.p >= 1:
            problems.append("p must be >= 1")
        if self.grid < 1:
            problems.append("grid must be >= 1")
        return problems


@dataclass
class RunConfig:
    name: str = "run"
    mesh: PrimitiveSpec = field(default_factory=PrimitiveSpec)
    # OBJ/PLY source; takes precedence over the primitive
    mesh_path: Optional[str] = None
    constraint: ConstraintSpec = field(default_factory=ConstraintSpec)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    monitor: MonitorSpec = field(default_factory=MonitorSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    output_dir: str = "runs/out"
    seed: int = 0
    # None: CSDFLOW_THREADS, then os.cpu_count()
    threads: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


config = RunConfig()


class StopReason(str, enum.Enum):
    RUNNING = "Running"
    COMPLETED = "Completed"
    NECK_COLLAPSE = "NeckCollapse"
    CURVATURE_BLOWUP = "CurvatureBlowup"
    CONSTRAINT_UNDEFINED = "ConstraintUndefined"
    SOLVER_FAILURE = "SolverFailure"
    STEP_LIMIT = "StepLimit"


@dataclass
class FlowState:
    mesh: 'TriMesh'
    cache: 'GeometryCache'
    t: float = 0.0
    step_index: int = 0
    dt: float = 0.0
    last_h: Optional[ConstraintValue] = None
    # Largest vertex displacement of the previous step
    last_displacement: Optional[float] = None


@dataclass(order=True)
class Event:
    timestamp: float
    priority: int
    callback: Callable = field(compare=False)
    args: tuple = field(default=(), compare=False)
    kwargs: dict = field(default_factory=dict, compare=False)


class FlowSimulatorProtocol(Protocol):
    t: float
    state: Optional[FlowState]
    logs: List[tuple]

    def log(self, source: str, message: str) -> None: ...
    def schedule(self, delay: float, callback: Callable, *args, **kwargs) -> None: ...
