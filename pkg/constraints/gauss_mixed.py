import numpy as np

from utils.protocol import ConstraintValue


class GaussMixedConstraint:
    """h = -int (Delta H) K / int K. Holds int H fixed on closed surfaces."""
    kind = "GaussMixed"

    def evaluate(self, state, spec, t):
        cache = state.cache
        # m_i K_i is the angle defect, so both integrals are defect-weighted sums
        numerator = -float(np.dot(cache.angle_defect, cache.laplacian_H))
        denominator = float(cache.angle_defect.sum())
        return ConstraintValue.quotient(self.kind, numerator, denominator, spec.denom_eps)
