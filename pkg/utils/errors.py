from __future__ import annotations
from typing import Optional


class CsdFlowError(Exception):
    """Base class for every failure raised by the flow lab"""
    exit_code: int = 1


# Mesh construction and I/O

class MeshError(CsdFlowError):
    exit_code = 2


class NonManifoldEdge(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


class IndexOutOfRange(MeshError):
    pass


class ResolutionTooLow(MeshError):
    pass


class MeshFormatError(MeshError):
    pass


class ConfigInvalid(CsdFlowError):
    exit_code = 3

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# Time stepping

class SolverFailure(CsdFlowError):
    exit_code = 4


class LinearSolveFailure(SolverFailure):
    pass


class NanDetected(SolverFailure):
    pass


class StepBelowDtMin(SolverFailure):
    pass


class PinchDetected(SolverFailure):
    """Axisymmetric profile reached the pinch tolerance. A normal stop."""

    def __init__(self, min_radius: float, t: float):
        self.min_radius = min_radius
        self.t = t
        super().__init__(f"pinch at t={t:.6g}, min r={min_radius:.3e}")


# Constraint evaluation

class ConstraintError(CsdFlowError):
    pass


class DenominatorVanishing(ConstraintError):
    def __init__(self, kind: str, numerator: float, denominator: float, denom_eps: float):
        self.kind = kind
        self.numerator = numerator
        self.denominator = denominator
        self.denom_eps = denom_eps
        super().__init__(
            f"{kind}: |denominator| {abs(denominator):.3e} below denomEps {denom_eps:.3e}")


class UnboundedTimeFunction(ConstraintError):
    pass


# Diagnostics

class DiagnosticError(CsdFlowError):
    pass


class ThresholdAboveTotal(DiagnosticError):
    def __init__(self, epsilon0: float, total: float, rho: Optional[float] = None):
        self.epsilon0 = epsilon0
        self.total = total
        self.rho = rho
        super().__init__(f"epsilon0={epsilon0:.6g} >= total curvature {total:.6g}")


class InsufficientSamples(DiagnosticError):
    pass


class CutoffTooNarrow(DiagnosticError):
    pass


class RhoOutOfRange(DiagnosticError):
    pass


class StepTooSmall(DiagnosticError):
    pass


class TrajectoryError(CsdFlowError):
    exit_code = 5
