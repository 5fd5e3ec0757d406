"""Declarative run configuration (YAML) for the command line front end.

Grammar (all sections optional except ``variant``)::

    variant: gv_power_nash          # one of mftg.games.VARIANTS
    name: table_v                   # free label, copied to outputs
    grid: {T: 1.0, N: 1000, substeps: 1, check: true}
    regimes:
      states: [s_lower, s_upper]
      rates: {s_upper: {s_lower: 0.7}, s_lower: {s_upper: 0.4}}   # off-diagonal q(s -> s')
      initial: s_lower
    players:                        # blocks of identical players
      - {name: crowd, count: 2018, k: 2, kbar: 2, coef: {q: 1, r: 1, b2: 1}}
    coef: {sigma: 1, sigma_gv: {s_lower: 0.01, s_upper: 1}}     # game-level
    state: {x0: 50, xbar0: null, spread: 0}
    noise:
      hurst: 0.8                    # fBm kernel K_H for the Gauss-Volterra noise
      jump: {c: 5, decay: 5, mu_scale: 1, atoms: [[0.5, 1.0]]}
      jump_common: {...}
    options: {k: 2}                 # variant specific (see OPTIONS)
    simulation: {paths: 100, particles: 100, seed: 0, mode: ode, gv_scheme: effective, record_paths: 4}
    verify: {value: true, deviation: true, gammas: [0.5, 0.8, 1.25, 2.0], saddle: true,
             cooperative: true, martingale: false, atol: 0.0}
    output: {dir: out}

A coefficient is a number, a mapping regime -> value, or
``{piecewise: [[t0, v0], [t1, v1], ...]}`` (value v_i on [t_i, t_{i+1})),
the latter also allowed inside a per-regime mapping.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np
import yaml

from .core import JumpSpec, RegimeField, TimeGrid
from .errors import MissingField, NegativeRate, ParseError
from .games import REGISTRY, VARIANTS, build, make_spec
from .games.base import RAW_GAME_COEFS, VECTOR_COEFS, GameSpec
from .noise import VolterraKernel

SECTIONS = {
    "variant", "name", "grid", "regimes", "players", "coef", "state", "noise", "options",
    "simulation", "verify", "output",
}
GRID_KEYS = {"T", "N", "substeps", "check"}
REGIME_KEYS = {"states", "rates", "initial"}
PLAYER_KEYS = {"name", "count", "k", "kbar", "coef"}
STATE_KEYS = {"x0", "xbar0", "spread"}
NOISE_KEYS = {"hurst", "jump", "jump_common"}
JUMP_KEYS = {"c", "decay", "mu_scale", "atoms"}
SIM_KEYS = {"paths", "particles", "seed", "mode", "gv_scheme", "record_paths"}
VERIFY_KEYS = {"value", "deviation", "gammas", "saddle", "cooperative", "martingale", "atol"}
OUTPUT_KEYS = {"dir"}
SWITCH_KEYS = {"b2", "b2bar", "b1", "b1bar", "bo"}

OPTIONS = {
    "log_state": {"k"},
    "log_square": set(),
    "legendre_fenchel": {"loss", "k", "kappa"},
    "geometric_gv": {"k"},
    "controlled_switching": {"b1_law", "b1_std"},
    "quadratic_quadratic": set(),
    "cotangent": set(),
    "hyperbolic_cotangent": set(),
    "delayed_trend": {"rho", "lam", "tau", "convention", "beta_mode"},
    "gv_power_nash": set(),
    "gv_power_cooperative": set(),
    "gv_power_adversarial": set(),
}

# game coefficients the variant derives when absent
DERIVED_COEFS = {"delayed_trend": {"b12"}}

DEFAULT_GAMMAS = [0.5, 0.8, 1.25, 2.0]


@dataclass
class RunConfig:
    """Validated configuration; plain data only so it serialises losslessly."""

    variant: str
    name: str = ""
    T: float = 1.0
    N: int = 1000
    substeps: int = 1
    check: bool = True
    states: list = field(default_factory=lambda: ["s0"])
    rates: dict = field(default_factory=dict)
    initial: Any = None
    players: list = field(default_factory=list)
    coef: dict = field(default_factory=dict)
    x0: float = 1.0
    xbar0: Optional[float] = None
    spread: float = 0.0
    hurst: Optional[float] = None
    jump: Optional[dict] = None
    jump_common: Optional[dict] = None
    options: dict = field(default_factory=dict)
    paths: int = 100
    particles: int = 100
    seed: int = 0
    mode: str = "ode"
    gv_scheme: str = "effective"
    record_paths: int = 4
    verify: dict = field(default_factory=dict)
    out: str = "out"

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        out = {"variant": d["variant"]}
        if d["name"]:
            out["name"] = d["name"]
        out["grid"] = {"T": d["T"], "N": d["N"], "substeps": d["substeps"], "check": d["check"]}
        out["regimes"] = {"states": d["states"], "rates": d["rates"], "initial": self.initial_state}
        out["players"] = d["players"]
        out["coef"] = d["coef"]
        out["state"] = {"x0": d["x0"], "xbar0": d["xbar0"], "spread": d["spread"]}
        noise = {}
        for key in ("hurst", "jump", "jump_common"):
            if d[key] is not None:
                noise[key] = d[key]
        if noise:
            out["noise"] = noise
        if d["options"]:
            out["options"] = d["options"]
        out["simulation"] = {k: d[k] for k in ("paths", "particles", "seed", "mode", "gv_scheme", "record_paths")}
        out["verify"] = self.verify_settings
        out["output"] = {"dir": d["out"]}
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @property
    def initial_state(self):
        return self.states[0] if self.initial is None else self.initial

    @property
    def verify_settings(self) -> dict:
        v = {"value": True, "deviation": True, "gammas": list(DEFAULT_GAMMAS), "saddle": True,
             "cooperative": True, "martingale": False, "atol": 0.0}
        v.update(self.verify)
        return v

    def with_overrides(self, *, seed=None, paths=None, particles=None, N=None, out=None) -> "RunConfig":
        c = copy.deepcopy(self)
        if seed is not None:
            c.seed = int(seed)
        if paths is not None:
            c.paths = int(paths)
        if particles is not None:
            c.particles = int(particles)
        if N is not None:
            c.N = int(N)
        if out is not None:
            c.out = str(out)
        return c

    # -- game construction ---------------------------------------------------
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def to_spec(self) -> GameSpec:
        grid = self.grid()
        states = list(self.states)
        rates = {(a, b): v for a, row in self.rates.items() for b, v in row.items()}
        players = []
        for p in self.players:
            blk = {k: p[k] for k in ("name", "count", "k", "kbar") if k in p}
            for cname, val in p.get("coef", {}).items():
                blk[cname] = val if cname in VECTOR_COEFS else _coef_field(val, grid, states)
            players.append(blk)
        coef = {}
        for cname, val in self.coef.items():
            coef[cname] = ({k: np.asarray(v, float) for k, v in val.items()} if cname in RAW_GAME_COEFS
                           else _coef_field(val, grid, states))
        kw = dict(x0=float(self.x0), xbar0=None if self.xbar0 is None else float(self.xbar0),
                  x0_spread=float(self.spread), s0=self.initial_state, extra=dict(self.options))
        if self.hurst is not None:
            kw["kernel"] = VolterraKernel.fbm(self.hurst)
        if self.jump is not None:
            kw["jump"] = _jump(self.jump)
        if self.jump_common is not None:
            kw["jump_common"] = _jump(self.jump_common)
        return make_spec(self.variant, T=self.T, N=self.N, states=states, rates=rates or None,
                         players=players, coef=coef, **kw)

    def build(self):
        """Build the game definition (runs the variant's hypothesis checks)."""
        return build(self.to_spec())


def _jump(d: dict) -> JumpSpec:
    return JumpSpec(c=float(d.get("c", 0.0)), decay=float(d.get("decay", 5.0)),
                    mu_scale=float(d.get("mu_scale", 1.0)),
                    atoms=tuple(tuple(a) for a in d.get("atoms", ())))


def _piecewise(pieces, grid: TimeGrid) -> np.ndarray:
    t = grid.t
    out = np.empty_like(t)
    starts = [float(p[0]) for p in pieces]
    for i, (t0, v) in enumerate(pieces):
        hi = starts[i + 1] if i + 1 < len(pieces) else np.inf
        out[(t >= float(t0) - 1e-12) & (t < hi - 1e-12)] = float(v)
    return out


def _coef_field(val, grid: TimeGrid, states: list) -> RegimeField:
    S = len(states)
    if isinstance(val, dict) and "piecewise" in val:
        col = _piecewise(val["piecewise"], grid)
        return RegimeField(grid, np.repeat(col[:, None], S, axis=1))
    if isinstance(val, dict):
        cols = []
        for s in states:
            v = val[s]
            cols.append(_piecewise(v["piecewise"], grid) if isinstance(v, dict) else np.full(grid.N + 1, float(v)))
        return RegimeField(grid, np.stack(cols, axis=1))
    return RegimeField.constant(grid, np.full(S, float(val)))


# ---------------------------------------------------------------------------
# parsing


class _Located:
    """Python data with the source line of every mapping key and sequence item."""

    def __init__(self, text: str):
        try:
            loader = yaml.SafeLoader(text)
            try:
                node = loader.get_single_node()
                self.data = loader.construct_document(node) if node is not None else None
            finally:
                loader.dispose()
        except yaml.MarkedYAMLError as e:
            mark = e.problem_mark or e.context_mark
            raise ParseError(mark.line + 1 if mark else None, str(e.problem or e)) from None
        except yaml.YAMLError as e:
            raise ParseError(None, str(e)) from None
        self.lines = {}
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self._walk(v, path + (key,))
                self.lines[path + (key,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Parser:
    def __init__(self, text: str):
        self.src = _Located(text)

    def fail(self, path, message):
        raise ParseError(self.src.line(path), message)

    def mapping(self, value, path, allowed=None):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, f"'{_dotted(path) or 'document'}' must be a mapping")
        for k in value:
            if not isinstance(k, str):
                self.fail(path, f"keys of '{_dotted(path)}' must be strings, got {k!r}")
            if allowed is not None and k not in allowed:
                where = _dotted(path) or "top level"
                self.fail(path + (k,), f"unknown key '{k}' in {where}; allowed: {', '.join(sorted(allowed))}")
        return value

    def number(self, value, path, *, integer=False, positive=False, nonneg=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"'{_dotted(path)}' must be a number, got {value!r}")
        if integer:
            if int(value) != value:
                self.fail(path, f"'{_dotted(path)}' must be an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        if not np.isfinite(value):
            self.fail(path, f"'{_dotted(path)}' must be finite")
        if positive and not value > 0:
            self.fail(path, f"'{_dotted(path)}' must be positive, got {value}")
        if nonneg and value < 0:
            self.fail(path, f"'{_dotted(path)}' must be nonnegative, got {value}")
        return value

    def boolean(self, value, path):
        if not isinstance(value, bool):
            self.fail(path, f"'{_dotted(path)}' must be true or false, got {value!r}")
        return value

    def choice(self, value, path, options):
        if value not in options:
            self.fail(path, f"'{_dotted(path)}' must be one of {', '.join(map(str, options))}, got {value!r}")
        return value

    # -- coefficients --------------------------------------------------------
    def pieces(self, value, path, T):
        if not isinstance(value, list) or not value:
            self.fail(path, f"'{_dotted(path)}' must be a nonempty list of [t, value] pairs")
        out, last = [], -np.inf
        for i, item in enumerate(value):
            if not isinstance(item, list) or len(item) != 2:
                self.fail(path + (i,), f"'{_dotted(path + (i,))}' must be a [t, value] pair")
            t = self.number(item[0], path + (i, 0))
            v = self.number(item[1], path + (i, 1))
            if t <= last:
                self.fail(path + (i,), "piecewise start times must increase")
            if not 0 <= t <= T:
                self.fail(path + (i,), f"piecewise start time {t} outside [0, {T}]")
            last = t
            out.append([t, v])
        if out[0][0] != 0:
            self.fail(path, "piecewise coefficients must start at t = 0")
        return out

    def coefficient(self, value, path, states, T):
        if isinstance(value, dict):
            if set(value) == {"piecewise"}:
                return {"piecewise": self.pieces(value["piecewise"], path + ("piecewise",), T)}
            self.mapping(value, path, set(states))
            out = {}
            for s in states:
                if s not in value:
                    self.fail(path, f"'{_dotted(path)}' lacks a value for regime '{s}'")
                v = value[s]
                if isinstance(v, dict):
                    self.mapping(v, path + (s,), {"piecewise"})
                    out[s] = {"piecewise": self.pieces(v.get("piecewise"), path + (s, "piecewise"), T)}
                else:
                    out[s] = self.number(v, path + (s,))
            return out
        return self.number(value, path)

    def vector(self, value, path):
        if not isinstance(value, list):
            self.fail(path, f"'{_dotted(path)}' must be a list of numbers")
        return [self.number(v, path + (i,)) for i, v in enumerate(value)]

    def tensor(self, value, path, shape):
        arr = value
        try:
            a = np.asarray(arr, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, f"'{_dotted(path)}' must be a nested list of numbers")
        if a.shape != shape:
            self.fail(path, f"'{_dotted(path)}' must have shape {shape}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            self.fail(path, f"'{_dotted(path)}' must be finite")
        return a.tolist()

    # -- sections --------------------------------------------------------------
    def parse(self) -> RunConfig:
        doc = self.mapping(self.src.data, (), SECTIONS)
        if "variant" not in doc:
            self.fail((), "missing required key 'variant'")
        variant = self.choice(doc["variant"], ("variant",), VARIANTS)
        cls = REGISTRY[variant]
        cfg = RunConfig(variant)
        if "name" in doc:
            cfg.name = str(doc["name"])

        g = self.mapping(doc.get("grid"), ("grid",), GRID_KEYS)
        if "T" in g:
            cfg.T = self.number(g["T"], ("grid", "T"), positive=True)
        if "N" in g:
            cfg.N = self.number(g["N"], ("grid", "N"), integer=True)
            if cfg.N < 2:
                self.fail(("grid", "N"), "'grid.N' must be at least 2")
        if "substeps" in g:
            cfg.substeps = self.number(g["substeps"], ("grid", "substeps"), integer=True, positive=True)
        if "check" in g:
            cfg.check = self.boolean(g["check"], ("grid", "check"))

        self.regimes(doc.get("regimes"), cfg)
        self.players(doc.get("players"), cfg, cls)
        self.game_coefs(doc.get("coef"), cfg, cls)

        st = self.mapping(doc.get("state"), ("state",), STATE_KEYS)
        if "x0" in st:
            cfg.x0 = self.number(st["x0"], ("state", "x0"))
        if st.get("xbar0") is not None:
            cfg.xbar0 = self.number(st["xbar0"], ("state", "xbar0"))
        if "spread" in st:
            cfg.spread = self.number(st["spread"], ("state", "spread"), nonneg=True)

        nz = self.mapping(doc.get("noise"), ("noise",), NOISE_KEYS)
        if nz.get("hurst") is not None:
            cfg.hurst = self.number(nz["hurst"], ("noise", "hurst"))
            if not 0 < cfg.hurst < 1:
                self.fail(("noise", "hurst"), f"'noise.hurst' must lie in (0, 1), got {cfg.hurst}")
        for key in ("jump", "jump_common"):
            if nz.get(key) is not None:
                setattr(cfg, key, self.jump(nz[key], ("noise", key)))

        opts = self.mapping(doc.get("options"), ("options",), OPTIONS[variant])
        cfg.options = dict(opts)

        sim = self.mapping(doc.get("simulation"), ("simulation",), SIM_KEYS)
        for key in ("paths", "particles", "record_paths"):
            if key in sim:
                setattr(cfg, key, self.number(sim[key], ("simulation", key), integer=True, positive=key != "record_paths",
                                              nonneg=True))
        if "seed" in sim:
            cfg.seed = self.number(sim["seed"], ("simulation", "seed"), integer=True, nonneg=True)
        if "mode" in sim:
            cfg.mode = self.choice(sim["mode"], ("simulation", "mode"), ("ode", "particle"))
        if "gv_scheme" in sim:
            cfg.gv_scheme = self.choice(sim["gv_scheme"], ("simulation", "gv_scheme"), ("effective", "volterra"))

        ver = self.mapping(doc.get("verify"), ("verify",), VERIFY_KEYS)
        v = {}
        for key in ("value", "deviation", "saddle", "cooperative", "martingale"):
            if key in ver:
                v[key] = self.boolean(ver[key], ("verify", key))
        if "gammas" in ver:
            v["gammas"] = self.vector(ver["gammas"], ("verify", "gammas"))
        if "atol" in ver:
            v["atol"] = self.number(ver["atol"], ("verify", "atol"), nonneg=True)
        cfg.verify = v

        out = self.mapping(doc.get("output"), ("output",), OUTPUT_KEYS)
        if "dir" in out:
            cfg.out = str(out["dir"])
        # store defaults explicitly so that serialising is lossless
        cfg.initial = cfg.initial_state
        cfg.verify = cfg.verify_settings
        return cfg

    def regimes(self, value, cfg):
        r = self.mapping(value, ("regimes",), REGIME_KEYS)
        if "states" in r:
            states = r["states"]
            if not isinstance(states, list) or not states:
                self.fail(("regimes", "states"), "'regimes.states' must be a nonempty list")
            if len(set(map(str, states))) != len(states):
                self.fail(("regimes", "states"), "regime labels must be distinct")
            cfg.states = [str(s) for s in states]
        rates = self.mapping(r.get("rates"), ("regimes", "rates"), set(cfg.states))
        out = {}
        for a, row in rates.items():
            row = self.mapping(row, ("regimes", "rates", a), set(cfg.states) - {a})
            out[a] = {}
            for b, v in row.items():
                path = ("regimes", "rates", a, b)
                v = self.number(v, path)
                if v < 0:
                    raise NegativeRate(f"line {self.src.line(path)}: switching rate "
                                       f"'{_dotted(path)}' (q[{a}->{b}]) = {v} is negative")
                out[a][b] = v
        cfg.rates = out
        if r.get("initial") is not None:
            cfg.initial = self.choice(str(r["initial"]), ("regimes", "initial"), cfg.states)

    def players(self, value, cfg, cls):
        if value is None:
            value = []
        if not isinstance(value, list):
            self.fail(("players",), "'players' must be a list of player blocks")
        allowed = set(cls.player_coefs)
        required = allowed - set(cls.optional_player_coefs)
        names = set()
        for i, p in enumerate(value):
            path = ("players", i)
            p = self.mapping(p, path, PLAYER_KEYS)
            blk = {"name": str(p.get("name", f"p{i + 1}"))}
            if blk["name"] in names:
                self.fail(path, f"duplicate player block name '{blk['name']}'")
            names.add(blk["name"])
            for key in ("count", "k", "kbar"):
                if key in p:
                    blk[key] = self.number(p[key], path + (key,), integer=True, positive=True)
            coefs = self.mapping(p.get("coef"), path + ("coef",), allowed)
            for need in sorted(required - set(coefs)):
                raise MissingField(cfg.variant, f"players[{i}].coef.{need}", self.src.line(path))
            blk["coef"] = {}
            for cname, val in coefs.items():
                cpath = path + ("coef", cname)
                blk["coef"][cname] = (self.vector(val, cpath) if cname in VECTOR_COEFS
                                      else self.coefficient(val, cpath, cfg.states, cfg.T))
            cfg.players.append(blk)

    def game_coefs(self, value, cfg, cls):
        allowed = set(cls.game_coefs)
        coefs = self.mapping(value, ("coef",), allowed)
        optional = set(cls.optional_game_coefs) | DERIVED_COEFS.get(cfg.variant, set())
        for need in sorted(allowed - optional - set(coefs)):
            raise MissingField(cfg.variant, f"coef.{need}", self.src.line(("coef",)))
        P, S = len(cfg.players), len(cfg.states)
        for cname, val in coefs.items():
            path = ("coef", cname)
            if cname in RAW_GAME_COEFS:
                sw = self.mapping(val, path, SWITCH_KEYS)
                out = {}
                for key in sorted(SWITCH_KEYS):
                    out[key] = (self.tensor(sw[key], path + (key,), (P, S, S)) if key in sw
                                else np.zeros((P, S, S)).tolist())
                    if key == "bo" and np.any(np.asarray(out[key]) < 0):
                        raise NegativeRate(f"line {self.src.line(path + (key,))}: switching rate "
                                           f"'{_dotted(path + (key,))}' has a negative entry")
                cfg.coef[cname] = out
            else:
                cfg.coef[cname] = self.coefficient(val, path, cfg.states, cfg.T)

    def jump(self, value, path):
        j = self.mapping(value, path, JUMP_KEYS)
        out = {}
        for key in ("c", "decay", "mu_scale"):
            if key in j:
                out[key] = self.number(j[key], path + (key,), nonneg=key == "c")
        if "atoms" in j:
            atoms = j["atoms"]
            if not isinstance(atoms, list):
                self.fail(path + ("atoms",), f"'{_dotted(path + ('atoms',))}' must be a list of [theta, weight]")
            out["atoms"] = []
            for i, a in enumerate(atoms):
                if not isinstance(a, list) or len(a) != 2:
                    self.fail(path + ("atoms", i), "jump atoms are [theta, weight] pairs")
                out["atoms"].append([self.number(a[0], path + ("atoms", i, 0)),
                                     self.number(a[1], path + ("atoms", i, 1), nonneg=True)])
        return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML text; errors carry the offending line."""
    return _Parser(text).parse()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
