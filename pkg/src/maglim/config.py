"""Experiment configuration: sectioned key-value files, fully resolved."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

KINDS = ("oracle-validate", "sample", "mgf", "free-energy", "charfn", "scaling", "mesoscopic",
         "crossing", "coupling", "kasahara-selftest")

# every key must be present; lists are comma separated and may be empty
SCHEMA = {
    "experiment": ("kind", "output"),
    "geometry": ("L", "a", "bc"),
    "physics": ("h", "t_grid", "h_grid", "eps", "M", "lam", "exponent", "inner", "outer",
                "alpha_prime", "max_annuli"),
    "sampling": ("algorithm", "n_equil", "n_meas", "thin", "chains", "seed", "dump"),
}


class ConfigError(ValueError):
    pass


def _num(text: str, key: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"key '{key}': not a number: {text!r}") from None


def _int(text: str, key: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"key '{key}': not an integer: {text!r}") from None


def _nums(text: str, key: str) -> tuple[float, ...]:
    return tuple(_num(x, key) for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    output: str
    L: tuple[float, ...]
    a: float
    bc: tuple[str, ...]
    h: tuple[float, ...]
    t_grid: tuple[float, ...]
    h_grid: tuple[float, ...]
    eps: float
    M: float
    lam: float
    exponent: float
    inner: float
    outer: float
    alpha_prime: float
    max_annuli: int
    algorithm: str
    n_equil: int
    n_meas: int
    thin: int
    chains: int
    seed: int
    dump: bool

    def sections(self) -> dict:
        def lst(v):
            return ",".join("%.17g" % x for x in v)

        return {
            "experiment": {"kind": self.kind, "output": self.output},
            "geometry": {"L": lst(self.L), "a": "%.17g" % self.a, "bc": ",".join(self.bc)},
            "physics": {"h": lst(self.h), "t_grid": lst(self.t_grid), "h_grid": lst(self.h_grid),
                        "eps": "%.17g" % self.eps, "M": "%.17g" % self.M, "lam": "%.17g" % self.lam,
                        "exponent": "%.17g" % self.exponent, "inner": "%.17g" % self.inner,
                        "outer": "%.17g" % self.outer, "alpha_prime": "%.17g" % self.alpha_prime,
                        "max_annuli": str(self.max_annuli)},
            "sampling": {"algorithm": self.algorithm, "n_equil": str(self.n_equil), "n_meas": str(self.n_meas),
                         "thin": str(self.thin), "chains": str(self.chains), "seed": str(self.seed),
                         "dump": "true" if self.dump else "false"},
        }

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.sections().items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.sections(), indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        """Hash of the resolved configuration minus the output location."""
        s = self.sections()
        s["experiment"] = {"kind": self.kind}
        return hashlib.sha256(json.dumps(s, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return ExperimentConfig(**d)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unparseable config: {e}".splitlines()[0]) from None
    for sec, keys in SCHEMA.items():
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
        for k in keys:
            if not cp.has_option(sec, k):
                raise ConfigError(f"missing key '{sec}.{k}'")
        extra = set(cp[sec]) - set(keys)
        if extra:
            raise ConfigError(f"unknown key '{sec}.{sorted(extra)[0]}'")
    g = lambda s, k: cp.get(s, k).strip()  # noqa: E731
    kind = g("experiment", "kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r} (valid: {', '.join(KINDS)})")
    bcs = tuple(x.strip().lower() for x in g("geometry", "bc").split(",") if x.strip())
    for b in bcs:
        if b not in ("plus", "minus", "free"):
            raise ConfigError(f"key 'geometry.bc': unknown boundary condition {b!r}")
    dump = g("sampling", "dump").lower()
    if dump not in ("true", "false"):
        raise ConfigError("key 'sampling.dump': expected true or false")
    cfg = ExperimentConfig(
        kind=kind,
        output=g("experiment", "output"),
        L=_nums(g("geometry", "L"), "geometry.L"),
        a=_num(g("geometry", "a"), "geometry.a"),
        bc=bcs,
        h=_nums(g("physics", "h"), "physics.h"),
        t_grid=_nums(g("physics", "t_grid"), "physics.t_grid"),
        h_grid=_nums(g("physics", "h_grid"), "physics.h_grid"),
        eps=_num(g("physics", "eps"), "physics.eps"),
        M=_num(g("physics", "M"), "physics.M"),
        lam=_num(g("physics", "lam"), "physics.lam"),
        exponent=_num(g("physics", "exponent"), "physics.exponent"),
        inner=_num(g("physics", "inner"), "physics.inner"),
        outer=_num(g("physics", "outer"), "physics.outer"),
        alpha_prime=_num(g("physics", "alpha_prime"), "physics.alpha_prime"),
        max_annuli=_int(g("physics", "max_annuli"), "physics.max_annuli"),
        algorithm=g("sampling", "algorithm").lower(),
        n_equil=_int(g("sampling", "n_equil"), "sampling.n_equil"),
        n_meas=_int(g("sampling", "n_meas"), "sampling.n_meas"),
        thin=_int(g("sampling", "thin"), "sampling.thin"),
        chains=_int(g("sampling", "chains"), "sampling.chains"),
        seed=_int(g("sampling", "seed"), "sampling.seed"),
        dump=dump == "true",
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.a <= 0:
        raise ConfigError("key 'geometry.a': mesh must be positive")
    if not cfg.L or any(x <= 0 for x in cfg.L):
        raise ConfigError("key 'geometry.L': need positive sides")
    for L in cfg.L:
        n = L / cfg.a
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError(f"key 'geometry.L': side {L:g} is not a multiple of the mesh {cfg.a:g}")
    if not cfg.bc:
        raise ConfigError("key 'geometry.bc': need at least one boundary condition")
    algs = ("metropolis", "heatbath", "sw", "wolff") + (("all",) if cfg.kind == "oracle-validate" else ())
    if cfg.algorithm not in algs:
        raise ConfigError(f"key 'sampling.algorithm': unknown algorithm {cfg.algorithm!r}")
    if cfg.thin < 1 or cfg.n_meas < 0 or cfg.n_equil < 0 or cfg.chains < 1:
        raise ConfigError("sampling counts must be non-negative, thin and chains >= 1")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text)
