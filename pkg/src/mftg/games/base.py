"""Game specification and the common interface of solved game classes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import JumpSpec, RegimeField, RegimeGenerator, TimeGrid, make_generator
from ..errors import DomainError, HypothesisViolation
from ..noise import VolterraKernel

DELTA = 1e-12  # positivity margin used for the "> delta > 0" hypotheses


def as_field(value, grid: TimeGrid, states: Sequence) -> RegimeField:
    """Coerce a scalar, per-regime sequence/mapping or RegimeField to a RegimeField."""
    if isinstance(value, RegimeField):
        if value.grid != grid or value.values.shape[1] != len(states):
            raise DomainError("coefficient field does not match the grid and regime set")
        return value
    if isinstance(value, Mapping):
        missing = [s for s in states if s not in value]
        if missing:
            raise DomainError(f"per-regime coefficient lacks regimes {missing}")
        extra = [s for s in value if s not in states]
        if extra:
            raise DomainError(f"per-regime coefficient names unknown regimes {extra}")
        value = [value[s] for s in states]
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(len(states), float(arr))
    if arr.shape != (len(states),):
        raise DomainError(f"expected {len(states)} per-regime values, got shape {arr.shape}")
    return RegimeField.constant(grid, arr)


class CoefTable:
    """Named coefficient arrays of shape (N+1, *shape, S) with fast lookups."""

    def __init__(self, grid: TimeGrid, arrays: Mapping[str, np.ndarray]):
        self.grid = grid
        self.names = list(arrays)
        self.shapes = [np.asarray(arrays[k]).shape[1:] for k in self.names]
        flat = [np.asarray(arrays[k], float).reshape(grid.N + 1, -1) for k in self.names]
        self.sizes = [f.shape[1] for f in flat]
        self.data = np.concatenate(flat, axis=1) if flat else np.zeros((grid.N + 1, 0))
        self.constant = bool(np.all(self.data == self.data[0]))
        self._const = self._split(self.data[0]) if self.constant else None

    def _split(self, row):
        out, i = {}, 0
        for name, size, shape in zip(self.names, self.sizes, self.shapes):
            out[name] = row[i:i + size].reshape(shape)
            i += size
        return out

    def at(self, t: float) -> dict:
        if self._const is not None:
            return self._const
        pos = min(max(t / self.grid.dt, 0.0), self.grid.N)
        n = min(int(pos), self.grid.N - 1)
        w = pos - n
        return self._split((1 - w) * self.data[n] + w * self.data[n + 1])

    def node(self, n: int) -> dict:
        if self._const is not None:
            return self._const
        return self._split(self.data[n])


@dataclass
class PlayerType:
    """A block of ``count`` identical players sharing coefficients."""

    name: str
    coef: dict
    count: int = 1
    k: int = 1
    kbar: int = 1

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise DomainError(f"player block '{self.name}' needs a positive integer count")
        for nm in ("k", "kbar"):
            v = getattr(self, nm)
            if int(v) != v or v < 1:
                raise DomainError(f"exponent {nm} of player '{self.name}' must be an integer >= 1, got {v}")
            setattr(self, nm, int(v))
        self.count = int(self.count)


@dataclass
class GameSpec:
    """Inputs of one game instance. Coefficients are RegimeFields on ``grid``."""

    variant: str
    grid: TimeGrid
    generator: RegimeGenerator
    players: list
    coef: dict = field(default_factory=dict)
    x0: float = 1.0
    xbar0: Optional[float] = None
    x0_spread: float = 0.0
    s0: int = 0
    jump: JumpSpec = field(default_factory=JumpSpec.none)
    jump_common: JumpSpec = field(default_factory=JumpSpec.none)
    kernel: Optional[VolterraKernel] = None
    extra: dict = field(default_factory=dict)

    @property
    def states(self):
        return self.generator.states

    @property
    def S(self) -> int:
        return self.generator.size

    @property
    def P(self) -> int:
        return len(self.players)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.count for p in self.players], dtype=float)

    @property
    def I(self) -> int:  # noqa: E743
        return int(self.counts.sum())

    @property
    def s0_index(self) -> int:
        return self.generator.index(self.s0)


def make_spec(variant: str, *, T: float = 1.0, N: int = 1000, states=("s0",), rates=None,
              players: Sequence[Mapping] = (), coef: Mapping = None, **kw) -> GameSpec:
    """Convenience constructor taking plain numbers.

    ``players`` holds mappings with optional keys name, count, k, kbar and the
    per-player coefficients; ``coef`` holds game-level coefficients.
    """
    grid = TimeGrid(T, N)
    gen = make_generator(states, rates)
    blocks = []
    for i, p in enumerate(players):
        p = dict(p)
        meta = {m: p.pop(m) for m in ("name", "count", "k", "kbar", "team") if m in p}
        name = meta.get("name", f"p{i + 1}")
        cf = {}
        for key, val in p.items():
            if key in VECTOR_COEFS:
                cf[key] = np.asarray(val, dtype=float)
            else:
                cf[key] = as_field(val, grid, gen.states)
        blocks.append(PlayerType(name, cf, meta.get("count", 1), meta.get("k", 1), meta.get("kbar", 1)))
    gcoef = {}
    for key, val in (coef or {}).items():
        gcoef[key] = val if key in RAW_GAME_COEFS else as_field(val, grid, gen.states)
    return GameSpec(variant, grid, gen, blocks, gcoef, **kw)


# per-player coefficients kept as raw arrays instead of regime fields
VECTOR_COEFS = {"r_row"}
# game-level coefficients kept raw (controlled-switching rate tensors)
RAW_GAME_COEFS = {"switch"}


def pick(arr, s):
    """Select regimes ``s`` (shape (R,)) from the last axis and append a particle axis."""
    return np.asarray(arr)[..., s][..., None]


def sum_others(term: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """sum_{j != i} over individual players, with term indexed by player type on axis 0."""
    c = counts.reshape((-1,) + (1,) * (term.ndim - 1))
    return (c * term).sum(axis=0, keepdims=True) - term


class GameDefinition:
    """Formulas of one solved game class.

    The coefficient system is stored as an array of shape (K, Pc, S): K kinds
    (alpha, alphabar, delta, ...), Pc coefficient owners (player types, or
    one aggregate), S regimes.
    """

    variant = "base"
    kinds: tuple = ()
    nonneg: tuple = ()
    player_coefs: tuple = ()
    game_coefs: tuple = ()
    optional_game_coefs: dict = {}
    optional_player_coefs: dict = {}
    meanfield = False
    aggregate = False  # one coefficient owner shared by all players
    jump_transform = None  # g(mu) summed per step for the idiosyncratic jumps
    jump_common_transform = None
    noises: frozenset = frozenset()

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.grid = spec.grid
        self.gen = spec.generator
        self.S = spec.S
        self.P = spec.P
        self.counts = spec.counts
        if self.P == 0:
            raise DomainError(f"{self.variant}: need at least one player block")
        self._fill_defaults()
        self.validate()
        self.table = self._build_table()
        self.setup()

    # -- construction ------------------------------------------------------
    def _fill_defaults(self):
        sp = self.spec
        for name in self.game_coefs:
            if name not in sp.coef:
                if name in self.optional_game_coefs:
                    sp.coef[name] = as_field(self.optional_game_coefs[name], sp.grid, sp.states)
                else:
                    raise HypothesisViolation(f"{self.variant}: missing game coefficient '{name}'")
        for p in sp.players:
            for name in self.player_coefs:
                if name not in p.coef:
                    if name in self.optional_player_coefs:
                        dv = self.optional_player_coefs[name]
                        if callable(dv):
                            dv = dv(p)
                        p.coef[name] = dv if isinstance(dv, RegimeField) else as_field(dv, sp.grid, sp.states)
                    else:
                        raise HypothesisViolation(
                            f"{self.variant}: player '{p.name}' lacks coefficient '{name}'")
        known_p = set(self.player_coefs)
        for p in sp.players:
            extra = set(p.coef) - known_p
            if extra:
                raise DomainError(f"{self.variant}: unknown coefficients {sorted(extra)} for player '{p.name}'")
        extra = set(sp.coef) - set(self.game_coefs)
        if extra:
            raise DomainError(f"{self.variant}: unknown game coefficients {sorted(extra)}")

    def _build_table(self):
        sp = self.spec
        arrays = {}
        for name in self.player_coefs:
            if name in VECTOR_COEFS:
                continue
            arrays[name] = np.stack([p.coef[name].values for p in sp.players], axis=1)
        for name in self.game_coefs:
            if name in RAW_GAME_COEFS:
                continue
            arrays[name] = sp.coef[name].values
        return CoefTable(sp.grid, arrays)

    def pcoef(self, name) -> np.ndarray:
        """All node values of a player coefficient, shape (N+1, P, S)."""
        return np.stack([p.coef[name].values for p in self.spec.players], axis=1)

    def gcoef(self, name) -> np.ndarray:
        return self.spec.coef[name].values

    def require(self, cond, message):
        if not np.all(cond):
            raise HypothesisViolation(f"{self.variant}: {message}")

    def validate(self):
        pass

    def setup(self):
        pass

    # -- coefficient system --------------------------------------------------
    @property
    def owners(self) -> int:
        return 1 if self.aggregate else self.P

    @property
    def component_names(self) -> list:
        if self.aggregate:
            return [f"{k}" for k in self.kinds]
        return [f"{k}[{p.name}]" for k in self.kinds for p in self.spec.players]

    def terminal(self) -> np.ndarray:
        raise NotImplementedError

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def coupling(self, y, t):
        return self.gen.coupling(y, t)

    def value(self, sol, player=None):
        """Equilibrium cost per player type (array of length P)."""
        raise NotImplementedError

    def check_solution(self, t, y):
        """Hook for per-step solver diagnostics (e.g. convexity denominators)."""

    # -- feedback and simulation ----------------------------------------------
    def initial_state(self, R: int, M: int, rngs=None) -> dict:
        """Per-particle state at t=0; ``rngs`` holds one generator per common path."""
        raise NotImplementedError

    def controls(self, c, a, s, state):
        """Equilibrium controls: (dev (P, R, M), mean (P, R, 1))."""
        raise NotImplementedError

    def running_cost(self, c, a, s, state, dev, mean) -> np.ndarray:
        raise NotImplementedError

    def terminal_cost(self, c, s, state) -> np.ndarray:
        raise NotImplementedError

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        """One step t_n -> t_{n+1} in regimes ``s``.

        ``nxt`` exposes the coefficients ``c``, solution ``a`` at t_{n+1} and
        ``controls(state)``, the feedback at t_{n+1} for any state.
        """
        raise NotImplementedError

    def observe(self, state):
        """Return (x, xbar) arrays for recording; xbar may be None."""
        return state["x"], state.get("xbar")

    def feedback(self, sol, t: float, s, x, xbar=None):
        """Equilibrium controls u_i at time t for regimes s (broadcast with x).

        Returns an array with a leading player-type axis.
        """
        s = np.atleast_1d(np.asarray(s, dtype=int))
        x = np.asarray(x, dtype=float).reshape(len(s), -1)
        state = self.state_from(x, None if xbar is None else np.asarray(xbar, float).reshape(len(s), 1))
        dev, mean = self.controls(self.table.at(t), sol.at(t), s, state)
        return dev + mean

    def state_from(self, x, xbar):
        st = {"x": x}
        if xbar is not None:
            st["xbar"] = xbar
        return st

    def describe_feedback(self, sol):
        """Rows (t, s, player, gain name, value) describing the feedback map."""
        return []

    @property
    def cost_weights(self) -> np.ndarray:
        """Weights turning per-type costs into the total objective."""
        return self.counts
