"""Exception hierarchy.

Every error raised by the package derives from ``MftgError`` and carries an
``exit_code`` used by the command line front end.
"""


class MftgError(Exception):
    exit_code = 1


class ParseError(MftgError):
    exit_code = 2

    def __init__(self, line, message):
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class MissingField(ParseError):
    def __init__(self, variant, field, line=None):
        self.variant = variant
        self.field = field
        super().__init__(line, f"variant '{variant}' requires field '{field}'")


class HypothesisViolation(MftgError):
    exit_code = 3


class NegativeRate(HypothesisViolation):
    pass


class DivergentMoment(HypothesisViolation):
    pass


class DomainError(MftgError, ValueError):
    exit_code = 3


class UnsupportedLoss(HypothesisViolation):
    pass


class OmegaNonpositive(HypothesisViolation):
    pass


class AggregateSignViolation(HypothesisViolation):
    pass


class BlowUp(MftgError):
    """A coefficient escaped the bound or became non-finite."""

    exit_code = 4

    def __init__(self, t, component, value=None):
        self.t = t
        self.component = component
        self.value = value
        super().__init__(f"coefficient '{component}' escaped at t={t:.6g} (value {value})")


class StepTooCoarse(BlowUp):
    def __init__(self, coarse, fine, rel):
        self.coarse = coarse
        self.fine = fine
        self.rel = rel
        MftgError.__init__(
            self, f"step halving changed t0 values by rel {rel:.3g}; refine the grid"
        )


class DenominatorSignFlip(BlowUp):
    def __init__(self, t, component):
        self.t = t
        self.component = component
        self.value = None
        MftgError.__init__(self, f"convexity denominator of '{component}' crossed zero at t={t:.6g}")


class SimulationError(MftgError):
    exit_code = 6


class TrigDomain(SimulationError):
    pass


class MeanfieldSingularity(SimulationError):
    pass


class StateNonPositive(SimulationError):
    pass


class DominatingRateExceeded(SimulationError):
    pass


class VerificationFailure(MftgError):
    exit_code = 5
