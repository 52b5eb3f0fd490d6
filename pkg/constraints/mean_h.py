from utils.protocol import ConstraintValue


class MeanHConstraint:
    """h = int |grad H|^2 / int H. Holds the surface area fixed."""
    kind = "MeanH"

    def evaluate(self, state, spec, t):
        cache = state.cache
        numerator = cache.dirichlet_energy(cache.H)
        denominator = cache.integrate(cache.H)
        return ConstraintValue.quotient(self.kind, numerator, denominator, spec.denom_eps)
