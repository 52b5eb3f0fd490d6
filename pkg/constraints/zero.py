from utils.protocol import ConstraintValue


class ZeroConstraint:
    """Plain surface diffusion, h = 0."""
    kind = "Zero"

    def evaluate(self, state, spec, t):
        return ConstraintValue(kind=self.kind, h=0.0, numerator=0.0, denominator=1.0)
