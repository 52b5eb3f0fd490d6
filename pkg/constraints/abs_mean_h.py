import numpy as np

from utils.protocol import ConstraintValue


class AbsMeanHConstraint:
    """h = int |grad H|^2 / int |H|.

    Enclosed volume does not decrease and area does not increase. |H| is
    taken vertex-wise.
    """
    kind = "AbsMeanH"

    def evaluate(self, state, spec, t):
        cache = state.cache
        numerator = cache.dirichlet_energy(cache.H)
        denominator = cache.integrate(np.abs(cache.H))
        return ConstraintValue.quotient(self.kind, numerator, denominator, spec.denom_eps)
