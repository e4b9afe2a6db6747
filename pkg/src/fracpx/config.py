"""Experiment configuration: an INI file with typed keys and line-numbered errors.

Grammar (see docs/config.md): ``[section]`` headers, ``key = value`` lines,
full-line ``#`` or ``;`` comments and inline `` #`` comments. Values are
typed by the key table below; lists are comma separated, and a 2D domain
separates intervals with ``;``.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .exponents import (ExponentError, PairExponent, ScalarExponent, affine_scalar, affine_trace_pair,
                        constant_pair, constant_scalar, example_exponent, piecewise_polynomial_pair,
                        piecewise_polynomial_scalar)
from .grid import BoxDomain, Grid

NODE_CAPS = {1: 257, 2: 33}
BUNDLED = ("default", "negative_control", "resolution_sweep")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _intervals(text: str) -> list[list[float]]:
    out = []
    for part in text.split(";"):
        v = _floats(part)
        if len(v) != 2:
            raise ValueError("each interval needs two numbers 'a, b'")
        out.append(v)
    return out


def _rows(text: str) -> list[list[float]]:
    return [_floats(part) for part in text.split(";")]


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"seed": (int, 0), "output_dir": (_str, "fracpx-out"), "threads": (int, 1)},
    "domain": {"intervals": (_intervals, [[0.0, 1.0]])},
    "grid": {"nodes": (_ints, [33])},
    "tolerances": {"quadrature": (float, 1e-6), "bisection": (float, 1e-10), "assertion": (float, 1e-8)},
    "function": {"kind": (_str, "linear"), "value": (float, 1.0), "amplitude": (float, 1.0),
                 "modes": (int, 6), "seed": (int, 0), "pinned": (_bool, False)},
    "nonlinearity": {"kind": (_str, "prototype"), "lambda": (float, 3.0)},
    "cutoff": {"t2": (float, 0.1), "beta": (_str, "auto"), "c_imb_policy": (_str, "empirical"),
               "c_imb_trials": (int, 16)},
    "solver": {"problem": (_str, "modified"), "tol": (float, 1e-6), "max_iters": (int, 5000),
               "start_amplitude": (float, 0.2), "starts": (int, 6), "use_symmetry": (_bool, True),
               "dedup_tol": (float, 1e-4)},
    "degiorgi": {"n_max": (int, 30), "kstar_mode": (_str, "sup_fraction"), "kstar_value": (float, 0.6),
                 "C16": (float, 1.0), "gamma1": (float, 1.0), "gamma2": (float, 1.0), "delta1": (float, 1.0),
                 "delta2": (float, 1.0), "b": (float, 2.0), "fit_delta1": (float, 0.1), "fit_delta2": (float, 0.1)},
    "suite": {"norm_trials": (int, 20), "probe_trials": (int, 20), "linf_lambdas": (_floats, [1.0, 2.0, 4.0, 8.0]),
              "linf_tol": (float, 1e-7), "subspace_n": (_ints, [1, 2, 3]), "subspace_samples": (int, 200),
              "subspace_const_samples": (int, 100), "min_solutions": (int, 2),
              "sweep_nodes": (_ints, []), "sweep_trials": (int, 8)},
}

EXPONENT_KEYS = {"kind": _str, "value": float, "s": float, "p0": float, "R": float, "c0": float,
                 "slope": _floats, "breaks": _floats, "coeffs": _rows, "axis": int}
EXPONENT_SECTIONS = {"exponent.p": "pair", "exponent.q": "scalar", "exponent.r": "scalar"}
EXPONENT_DEFAULTS = {
    "exponent.p": {"kind": "constant", "value": 2.0, "s": 0.5},
    "exponent.q": {"kind": "constant", "value": 3.0},
    "exponent.r": {"kind": "constant", "value": 1.5},
}
CHOICES = {
    ("function", "kind"): ("constant", "linear", "sine", "random"),
    ("nonlinearity", "kind"): ("prototype", "zero"),
    ("cutoff", "c_imb_policy"): ("empirical", "rigorous"),
    ("solver", "problem"): ("modified", "plain"),
    ("degiorgi", "kstar_mode"): ("formula", "sup_fraction", "value"),
}


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<config>"
    lines: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def line(self, section: str, key: Optional[str] = None) -> Optional[int]:
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def error(self, message: str, section: str, key: Optional[str] = None) -> ConfigError:
        return ConfigError(message, self.line(section, key), self.source)

    # --- built objects -------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def domain(self) -> BoxDomain:
        return BoxDomain(self.values["domain"]["intervals"])

    def grid(self) -> Grid:
        dom = self.domain()
        nodes = self.values["grid"]["nodes"]
        if len(nodes) == 1:
            nodes = nodes * dom.dim
        return Grid(dom, tuple(nodes))

    def pair_exponent(self) -> PairExponent:
        return _build_exponent(self, "exponent.p")

    def scalar_exponent(self, name: str) -> ScalarExponent:
        return _build_exponent(self, f"exponent.{name}")

    def to_dict(self) -> dict:
        return {s: dict(v) for s, v in sorted(self.values.items())}


def _line_table(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    table = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip()
            table.setdefault((section, None), i)
            continue
        if section and line and line[0] not in "#;":
            key = re.split(r"[=:]", line, 1)[0].strip()
            table.setdefault((section, key), i)
    return table


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    lines = _line_table(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key '{exc.option}' in [{exc.section}]", exc.lineno, source) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("unparseable line", lineno, source) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from None

    values: dict = {}
    for section, keys in SCHEMA.items():
        values[section] = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
    for section, d in EXPONENT_DEFAULTS.items():
        values[section] = dict(d)

    for section in cp.sections():
        if section in SCHEMA:
            table = {k: parser for k, (parser, _) in SCHEMA[section].items()}
        elif section in EXPONENT_SECTIONS:
            table = EXPONENT_KEYS
            values[section] = {}
        else:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), source)
        for key, raw in cp.items(section):
            if key not in table:
                raise ConfigError(f"unknown key '{key}' in [{section}]", lines.get((section, key)), source)
            try:
                val = table[key](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for '{key}': {exc}", lines.get((section, key)), source) from None
            choices = CHOICES.get((section, key))
            if choices and val not in choices:
                raise ConfigError(f"'{key}' must be one of {', '.join(choices)}", lines.get((section, key)), source)
            values[section][key] = val
    cfg = ExperimentConfig(values, source, lines)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        dom = cfg.domain()
    except ValueError as exc:
        raise cfg.error(str(exc), "domain", "intervals") from None
    nodes = cfg.get("grid", "nodes")
    if len(nodes) not in (1, dom.dim):
        raise cfg.error("nodes needs one entry or one per axis", "grid", "nodes")
    if min(nodes) < 3 or max(nodes) > NODE_CAPS[dom.dim]:
        raise cfg.error(f"nodes must lie in [3, {NODE_CAPS[dom.dim]}] for dimension {dom.dim}", "grid", "nodes")
    for n in cfg.get("suite", "sweep_nodes"):
        if n < 3 or n > NODE_CAPS[dom.dim]:
            raise cfg.error(f"sweep nodes must lie in [3, {NODE_CAPS[dom.dim]}]", "suite", "sweep_nodes")
    if cfg.get("run", "threads") < 1:
        raise cfg.error("threads must be at least 1", "run", "threads")
    for key in ("quadrature", "bisection", "assertion"):
        if cfg.get("tolerances", key) <= 0:
            raise cfg.error("tolerances must be positive", "tolerances", key)
    beta = cfg.get("cutoff", "beta")
    if beta != "auto":
        try:
            float(beta)
        except ValueError:
            raise cfg.error("beta must be 'auto' or a number", "cutoff", "beta") from None
    if cfg.get("cutoff", "t2") <= 0:
        raise cfg.error("t2 must be positive", "cutoff", "t2")
    if cfg.get("nonlinearity", "lambda") <= 0:
        raise cfg.error("lambda must be positive", "nonlinearity", "lambda")
    if cfg.get("degiorgi", "kstar_value") <= 0:
        raise cfg.error("kstar_value must be positive", "degiorgi", "kstar_value")
    for section in EXPONENT_SECTIONS:
        p = _build_exponent(cfg, section)
        try:
            p.validate(dom)
        except ExponentError as exc:
            raise cfg.error(str(exc), section) from None


def _need(cfg: ExperimentConfig, section: str, d: dict, key: str):
    if key not in d:
        raise cfg.error(f"exponent kind '{d.get('kind')}' needs '{key}'", section)
    return d[key]


def _build_exponent(cfg: ExperimentConfig, section: str):
    d = cfg.values[section]
    kind = d.get("kind", "constant")
    pair = EXPONENT_SECTIONS[section] == "pair"
    dom = cfg.domain()
    try:
        if pair:
            s = _need(cfg, section, d, "s")
            if kind == "constant":
                return constant_pair(_need(cfg, section, d, "value"), s, dom.dim)
            if kind == "example":
                return example_exponent(_need(cfg, section, d, "p0"), _need(cfg, section, d, "R"), s, domain=dom)
            if kind == "affine_trace":
                return affine_trace_pair(_need(cfg, section, d, "c0"), _need(cfg, section, d, "slope"), s, dom)
            if kind == "piecewise":
                return piecewise_polynomial_pair(_need(cfg, section, d, "breaks"), _need(cfg, section, d, "coeffs"),
                                                 s, dom.dim, d.get("axis", 0))
            choices = "constant, example, affine_trace, piecewise"
        else:
            if kind == "constant":
                return constant_scalar(_need(cfg, section, d, "value"), dom.dim)
            if kind == "affine":
                return affine_scalar(_need(cfg, section, d, "c0"), _need(cfg, section, d, "slope"), dom)
            if kind == "piecewise":
                return piecewise_polynomial_scalar(_need(cfg, section, d, "breaks"), _need(cfg, section, d, "coeffs"),
                                                   dom.dim, d.get("axis", 0))
            choices = "constant, affine, piecewise"
    except ExponentError as exc:
        raise cfg.error(str(exc), section) from None
    except ValueError as exc:
        raise cfg.error(f"bad exponent parameters: {exc}", section) from None
    raise cfg.error(f"unknown exponent kind '{kind}' (choose from {choices})", section, "kind")


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a config file; a bare bundled name (``default``, ...) loads the shipped copy."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = resources.files("fracpx").joinpath("configs", f"{path}.ini").read_text()
        return parse_config(text, source=f"{path}.ini")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, source=str(path))


def bundled_config_text(name: str = "default") -> str:
    return resources.files("fracpx").joinpath("configs", f"{name}.ini").read_text()


def function_from_config(cfg: ExperimentConfig, grid: Grid):
    """GridFunction named by the [function] section."""
    from .grid import interpolate
    from .nonlocal_ops import random_pinned_function

    f = cfg.values["function"]
    kind, pinned = f["kind"], f["pinned"]
    if kind == "constant":
        c = f["value"]
        return interpolate(lambda x: np.full(x.shape[:-1], c), grid, pin_boundary=pinned)
    if kind == "linear":
        a = f["amplitude"]
        return interpolate(lambda x: a * x[..., 0], grid, pin_boundary=pinned)
    if kind == "sine":
        a, m = f["amplitude"], f["modes"]
        lo, hi = grid.domain.lower, grid.domain.upper
        return interpolate(lambda x: a * np.prod(np.sin(m * np.pi * (x - lo) / (hi - lo)), axis=-1), grid,
                           pin_boundary=pinned)
    rng = np.random.default_rng(f["seed"])
    g = random_pinned_function(grid.domain, rng, f["modes"])
    return interpolate(lambda x: f["amplitude"] * g(x), grid, pin_boundary=True)
