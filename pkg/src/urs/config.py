"""Run configuration: nested JSON sections with defaults for the 2-year option setting.

A bare :class:`RunConfig` describes offline URS with ``p = 8``, ``m = 10``,
``I = 5``, Lasso weight 0.05 and bias filled with -2.3.  Files may set any
subset of keys; ``section.key=value`` overrides are applied on top.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, UrsError
from .evaluation import DEFAULT_HORIZONS, DEFAULT_LEVELS
from .gem import GemConfig
from .online import OnlineConfig
from .reservoir import InitConfig
from .synthetic import CirConfig, DatasetOptions
from .unscented import UtConfig


@dataclass
class ReservoirSection:
    p: int = 8
    m: int = 10
    eta1: float = 0.97
    eta2: float = 0.85
    bias_mean: float = -2.0
    bias_var: float = 1.0
    bias_fill: float = -2.3
    w0: float = 1e-4
    v0: float = 1e-2
    input_gain: float = 1.0
    initial_var: float = 1e-3


@dataclass
class UtSection:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0


@dataclass
class GemSection:
    lasso_alpha: float = 0.05
    term_ii_method: str = "joint_ut"
    max_iters: int = 30
    inner_steps: int = 10
    step_size: float = 1e-2
    shrink: float = 0.5
    grow: float = 2.0
    max_backtracks: int = 40
    patience: int = 5
    tol: float = 0.0
    update_noise: bool = True
    w_floor: float = 1e-7
    v_floor: float = 1e-10


@dataclass
class OnlineSection:
    p: int = 4
    param_innovation_var: float = 1e-6
    param_prior_var: float = 1e-3
    outer_iterations: int = 5
    patience: int = 2


@dataclass
class SyntheticSection:
    v0: float = 0.15
    long_term: float = 0.15
    reversion: float = 10.0
    vol_of_vol: float = 0.04
    dt: float = 1.0 / 252.0
    n: int = 200
    kappa_v: float = 0.01
    p0: float = 2000.0
    rate: float = 0.02
    noise_scale: str = "stdev"
    return_scale: str = "stdev"
    strike_range: list = field(default_factory=lambda: [0.9, 1.0])
    maturity_days: list = field(default_factory=lambda: [21, 252])
    day_count: float = 365.0


@dataclass
class DataSection:
    bundle: str = None
    options: str = None
    spot: str = None
    rates: str = None
    I: int = 5


@dataclass
class SplitSection:
    n_test: int = 24
    n_val: int = 1


@dataclass
class EvalSection:
    horizons: list = field(default_factory=lambda: list(DEFAULT_HORIZONS))
    levels: list = field(default_factory=lambda: [float(x) for x in DEFAULT_LEVELS])
    ci_level: float = 0.95
    seeds: int = 10


SECTIONS = {
    "reservoir": ReservoirSection,
    "ut": UtSection,
    "gem": GemSection,
    "online": OnlineSection,
    "synthetic": SyntheticSection,
    "data": DataSection,
    "split": SplitSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    reservoir: ReservoirSection = field(default_factory=ReservoirSection)
    ut: UtSection = field(default_factory=UtSection)
    gem: GemSection = field(default_factory=GemSection)
    online: OnlineSection = field(default_factory=OnlineSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d):
        """Build from a possibly partial dict; unknown keys and bad types are all reported."""
        problems = []
        cfg = cls()
        if not isinstance(d, dict):
            raise ConfigError(["configuration must be a JSON object"])
        for key, val in d.items():
            if key == "seed":
                cfg.seed = _coerce("seed", val, int, problems)
            elif key in SECTIONS:
                if not isinstance(val, dict):
                    problems.append("%s: must be an object" % key)
                    continue
                section = getattr(cfg, key)
                known = {f.name: f for f in fields(section)}
                for k, v in val.items():
                    if k not in known:
                        problems.append("%s.%s: unknown key" % (key, k))
                        continue
                    default = getattr(type(section)(), k)
                    setattr(section, k, _coerce("%s.%s" % (key, k), v, type(default), problems, default))
            else:
                problems.append("%s: unknown section" % key)
        if cfg.seed is None:
            cfg.seed = 0
            problems.append("seed: must be an integer")
        try:
            cfg.validate()
        except ConfigError as exc:
            problems.extend(exc.problems)
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(["cannot read %s: %s" % (path, exc)]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(["%s is not valid JSON: %s" % (path, exc)]) from exc
        return cls.from_dict(d)

    def with_overrides(self, assignments):
        """Apply ``section.key=value`` strings (values parsed as JSON, else kept as text)."""
        d = self.to_dict()
        problems = []
        for a in assignments:
            if "=" not in a:
                problems.append("override %r is not of the form key=value" % a)
                continue
            path, raw = a.split("=", 1)
            try:
                val = json.loads(raw)
            except json.JSONDecodeError:
                val = raw
            parts = path.strip().split(".")
            if len(parts) == 1:
                d[parts[0]] = val
            elif len(parts) == 2 and isinstance(d.get(parts[0]), dict):
                d[parts[0]][parts[1]] = val
            else:
                problems.append("override %r: unknown key %r" % (a, path))
        if problems:
            raise ConfigError(problems)
        return RunConfig.from_dict(d)

    # -- validation --------------------------------------------------------

    def validate(self):
        """Raise :class:`ConfigError` listing every violated field."""
        problems = []
        r, s, sp, ev, dt = self.reservoir, self.synthetic, self.split, self.eval, self.data
        if self.seed < 0:
            problems.append("seed: must be non-negative")
        for name, obj in (("reservoir", self.init_config), ("ut", self.ut_config), ("gem", self.gem_config),
                          ("online", self.online_config), ("synthetic", self.cir_config),
                          ("synthetic", self.dataset_options)):
            try:
                obj()
            except UrsError as exc:
                problems.append("%s: %s" % (name, exc))
            except (TypeError, ValueError) as exc:
                problems.append("%s: %s" % (name, exc))
        if r.initial_var <= 0:
            problems.append("reservoir.initial_var: must be positive")
        if r.w0 <= 0 or r.v0 <= 0:
            problems.append("reservoir.w0 and reservoir.v0: must be positive")
        if self.online.p < 1:
            problems.append("online.p: must be at least 1")
        if s.kappa_v < 0:
            problems.append("synthetic.kappa_v: must be non-negative")
        if s.p0 <= 0:
            problems.append("synthetic.p0: must be positive")
        if dt.I < 1:
            problems.append("data.I: must be at least 1")
        if sp.n_test < 1:
            problems.append("split.n_test: must be at least 1")
        if sp.n_val < 0:
            problems.append("split.n_val: must be non-negative")
        if not ev.horizons or any(int(k) < 1 for k in ev.horizons):
            problems.append("eval.horizons: must be a non-empty list of positive integers")
        elif max(ev.horizons) > sp.n_test:
            problems.append("eval.horizons: largest horizon %d exceeds split.n_test %d"
                            % (max(ev.horizons), sp.n_test))
        if not ev.levels or any(not 0 < q < 1 for q in ev.levels):
            problems.append("eval.levels: must lie in (0, 1)")
        if not 0 < ev.ci_level < 1:
            problems.append("eval.ci_level: must lie in (0, 1)")
        if ev.seeds < 1:
            problems.append("eval.seeds: must be at least 1")
        for k in ("bundle", "options", "spot", "rates"):
            if getattr(dt, k) is not None and not isinstance(getattr(dt, k), str):
                problems.append("data.%s: must be a path string" % k)
        market = [dt.options, dt.spot, dt.rates]
        if any(x is not None for x in market) and not all(x is not None for x in market):
            problems.append("data: options, spot and rates must be given together")
        if problems:
            raise ConfigError(problems)
        return self

    # -- typed views ---------------------------------------------------------

    def init_config(self, p=None, seed=None):
        r = self.reservoir
        return InitConfig(p=r.p if p is None else p, m=r.m, eta1=r.eta1, eta2=r.eta2, bias_mean=r.bias_mean,
                          bias_var=r.bias_var, bias_fill=r.bias_fill, w0=r.w0, v0=r.v0,
                          input_gain=r.input_gain, seed=self.seed if seed is None else seed)

    def ut_config(self):
        return UtConfig(self.ut.alpha, self.ut.beta, self.ut.kappa)

    def gem_config(self):
        return GemConfig(**asdict(self.gem))

    def online_config(self):
        o = self.online
        return OnlineConfig(o.param_innovation_var, o.param_prior_var, o.outer_iterations, o.patience)

    def cir_config(self, seed=None):
        s = self.synthetic
        return CirConfig(s.v0, s.long_term, s.reversion, s.vol_of_vol, s.dt, s.n,
                         self.seed if seed is None else seed)

    def dataset_options(self):
        s = self.synthetic
        return DatasetOptions(s.noise_scale, s.return_scale, tuple(s.strike_range), tuple(s.maturity_days),
                              s.day_count)


def _coerce(name, val, typ, problems, default=None):
    """Convert a JSON value to the type of the default, recording failures."""
    if val is None:
        return None
    if typ is type(None):
        return val  # optional field without a typed default (paths, bias_fill)
    try:
        if typ is bool:
            if not isinstance(val, bool):
                raise TypeError("expected true or false")
            return val
        if typ is int:
            if isinstance(val, bool) or (isinstance(val, float) and not float(val).is_integer()):
                raise TypeError("expected an integer")
            return int(val)
        if typ is float:
            if isinstance(val, bool):
                raise TypeError("expected a number")
            out = float(val)
            if not np.isfinite(out):
                raise ValueError("must be finite")
            return out
        if typ is list:
            if not isinstance(val, list):
                raise TypeError("expected a list")
            return list(val)
        if typ is str:
            if not isinstance(val, str):
                raise TypeError("expected a string")
            return val
    except (TypeError, ValueError) as exc:
        problems.append("%s: %s (got %r)" % (name, exc, val))
        return default
    return val
