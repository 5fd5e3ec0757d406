"""Game classes and their constructors, keyed by variant name."""
from __future__ import annotations

from ..errors import DomainError
from .base import CoefTable, GameDefinition, GameSpec, PlayerType, as_field, make_spec
from .gv_power import GVPowerAdversarial, GVPowerCooperative, GVPowerNash
from .meanfield import Cotangent, HyperbolicCotangent, QuadraticQuadratic
from .mf_free import GeometricGV, LegendreFenchel, LogSquare, LogState
from .special import ControlledSwitching, DelayedTrend

REGISTRY = {cls.variant: cls for cls in (
    LogState, LogSquare, LegendreFenchel, GeometricGV, ControlledSwitching, QuadraticQuadratic,
    Cotangent, HyperbolicCotangent, DelayedTrend, GVPowerNash, GVPowerCooperative, GVPowerAdversarial,
)}

VARIANTS = tuple(REGISTRY)


def build(spec: GameSpec) -> GameDefinition:
    """Construct the game definition for ``spec.variant`` (hypotheses are checked here)."""
    try:
        cls = REGISTRY[spec.variant]
    except KeyError:
        raise DomainError(f"unknown game variant {spec.variant!r}; known: {', '.join(VARIANTS)}") from None
    return cls(spec)


def _builder(variant):
    def fn(spec: GameSpec) -> GameDefinition:
        if spec.variant != variant:
            raise DomainError(f"spec is for {spec.variant!r}, not {variant!r}")
        return REGISTRY[variant](spec)
    fn.__name__ = f"build_{variant}"
    fn.__doc__ = f"Build the {variant.replace('_', ' ')} game from its spec."
    return fn


build_log_state = _builder("log_state")
build_log_square = _builder("log_square")
build_legendre_fenchel = _builder("legendre_fenchel")
build_geometric_gv = _builder("geometric_gv")
build_controlled_switching = _builder("controlled_switching")
build_quadratic_quadratic = _builder("quadratic_quadratic")
build_cotangent = _builder("cotangent")
build_hyperbolic_cotangent = _builder("hyperbolic_cotangent")
build_delayed_trend = _builder("delayed_trend")
build_gv_power_nash = _builder("gv_power_nash")
build_gv_power_cooperative = _builder("gv_power_cooperative")
build_gv_power_adversarial = _builder("gv_power_adversarial")

__all__ = [
    "REGISTRY", "VARIANTS", "build", "GameDefinition", "GameSpec", "PlayerType", "CoefTable",
    "as_field", "make_spec",
] + [f"build_{v}" for v in REGISTRY]
