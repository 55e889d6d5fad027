"""Flat ``key = value`` run configurations and the coefficient preset grammar."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError
from .mesh import DomainSpec, Grid, GridFunction, read_grid_function_csv

__all__ = ["COMMANDS", "RunConfig", "parse_config", "parse_args", "parse_domain", "resolve_preset", "KEYS"]

COMMANDS = ("constants", "solve-linear", "solve-npbe", "radial", "certify-nonunique", "bifurcate", "tangency")


def _num(text: str) -> float:
    t = text.strip().lower()
    sign = -1.0 if t.startswith("-") else 1.0
    core = t.lstrip("+-")
    if core == "pi":
        return sign * math.pi
    m = re.fullmatch(r"([0-9.eE+-]+)\*?pi", core)
    if m:
        return sign * float(m.group(1)) * math.pi
    v = float(t)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {text!r}")
    return v


def _int(text):
    v = _num(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _floats(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(_num(p) for p in parts)


def _ints(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(_int(p) for p in parts)


def parse_domain(text: str) -> DomainSpec:
    """``interval:L``, ``box:L1,L2[,L3]`` or ``ball:R[,d]``."""
    kind, _, rest = text.strip().partition(":")
    vals = _floats(rest) if rest else ()
    kind = kind.lower()
    if kind == "interval" and len(vals) == 1:
        return DomainSpec.interval(vals[0])
    if kind == "box" and 1 <= len(vals) <= 3:
        return DomainSpec.box(*vals)
    if kind == "ball" and len(vals) in (1, 2):
        d = 3 if len(vals) == 1 else int(vals[1])
        return DomainSpec.ball(vals[0], d)
    raise ValueError("expected interval:L, box:L1[,L2[,L3]] or ball:R[,d]")


def _complex(text: str) -> complex:
    """``<re>[+<im>i]`` (also ``<im>i`` alone)."""
    t = text.strip().replace(" ", "")
    if not re.fullmatch(r"[0-9.eE+-]*(?:i)?", t) or t in ("", "i"):
        raise ValueError(f"bad constant {text!r}; expected <re>[+<im>i]")
    try:
        z = complex(t.replace("i", "j"))
    except ValueError:
        raise ValueError(f"bad constant {text!r}; expected <re>[+<im>i]") from None
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError(f"non-finite constant {text!r}")
    return z


def _lib(grid: Grid) -> dict[str, Callable]:
    org, L = grid.domain.origin, grid.domain.axis_lengths

    def sin_(*x):
        out = 1.0
        for xi, o, l in zip(x, org, L):
            out = out * np.sin(np.pi * (xi - o) / l)
        return out

    return {
        "one": lambda *x: np.ones_like(x[0]),
        "sin": sin_,
        "sinx": sin_,
        "x": lambda *x: x[0],
        "xy": lambda *x: x[0] * (x[1] if len(x) > 1 else 1.0),
        "r2": lambda *x: sum(xi**2 for xi in x),
    }


FUNC_NAMES = ("one", "sin", "sinx", "x", "xy", "r2")


def check_preset(text: str) -> str:
    kind, sep, rest = text.strip().partition(":")
    if not sep:
        raise ValueError("expected const:<re>[+<im>i], func:<name>[*<scale>] or csv:<path>")
    if kind == "const":
        _complex(rest)
    elif kind == "func":
        name, _, scale = rest.partition("*")
        if name not in FUNC_NAMES:
            raise ValueError(f"unknown function {name!r}; choose from {', '.join(FUNC_NAMES)}")
        if scale:
            _complex(scale)
    elif kind == "csv":
        if not rest:
            raise ValueError("csv preset needs a path")
    else:
        raise ValueError(f"unknown preset kind {kind!r}")
    return text.strip()


def resolve_preset(text: str, grid: Grid, base: Path | None = None) -> GridFunction:
    """Nodal field for a validated preset on ``grid``."""
    kind, _, rest = text.partition(":")
    if kind == "const":
        return GridFunction(grid, np.full(grid.shape, _complex(rest)))
    if kind == "func":
        name, _, scale = rest.partition("*")
        k = _complex(scale) if scale else 1.0
        vals = np.asarray(_lib(grid)[name](*grid.coordinates), dtype=complex) * k
        return GridFunction(grid, np.broadcast_to(vals, grid.shape))
    path = Path(rest)
    if base is not None and not path.is_absolute():
        path = base / path
    return read_grid_function_csv(path, grid)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    check: Callable[[Any], str | None] | None = None
    doc: str = ""


def _pos(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _unit_tol(v):
    return None if 0 < v < 1 else "must lie in (0, 1)"


def _nodes(v):
    return None if all(n >= 3 for n in v) else "needs >= 3 nodes per axis"


def _open36(v):
    return None if 3 < v < 6 else "must lie in (3, 6)"


def _dim(v):
    return None if v in (1, 2, 3) else "must be 1, 2 or 3"


def _decreasing(v):
    if any(e < 1e-8 for e in v):
        return "entries must be >= 1e-8"
    if any(b >= a for a, b in zip(v, v[1:])):
        return "must be strictly decreasing"
    return None


def _svals(v):
    if max(abs(s) for s in v) > 0.5:
        return "entries must satisfy |s| <= 0.5"
    if not np.allclose(sorted(-s for s in v), sorted(v), rtol=0, atol=1e-12):
        return "must be symmetric around 0"
    return None


def _mode(v):
    return None if v in ("taylor", "regularized") else "must be taylor or regularized"


def _int_ge(n):
    return lambda v: None if v >= n else f"must be >= {n}"


KEYS: dict[str, Key] = {
    "command": Key(str),
    "domain": Key(str),
    "nodes": Key(_ints, None, _nodes),
    "output": Key(str, "npbe_out"),
    "seed": Key(_int, 0, _nonneg),
    "eps": Key(check_preset, "const:1"),
    "kappa2": Key(check_preset, "const:0"),
    "f": Key(check_preset, "const:0"),
    "g": Key(check_preset, "const:0"),
    "M": Key(_num, None, _pos),
    "tol": Key(_num, 1e-10, _unit_tol),
    "max_iter": Key(_int, 200, _int_ge(1)),
    "p": Key(_num, None, _open36),
    "N_omega": Key(_int, 1, _int_ge(1)),
    "grad_zeta": Key(_num, None, _pos),
    "probe_trials": Key(_int, 2, _nonneg),
    "require_schauder": Key(_bool, True),
    "dimension": Key(_int, 3, _dim),
    "A": Key(_num, None, _nonneg),
    "kappa_tilde": Key(_num, 1.0, _pos),
    "lambda": Key(_num, 0.0, _nonneg),
    "c": Key(_num, 1.0),
    "r_max": Key(_num, 20.0, _pos),
    "eps_reg": Key(_num, 1e-3, _pos),
    "eps_sequence": Key(_floats, (1e-2, 1e-3, 1e-4), _decreasing),
    "mode": Key(str, "taylor", _mode),
    "n_zeros": Key(_int, 3, _int_ge(1)),
    "linear": Key(_bool, False),
    "s_values": Key(_floats, tuple(round(-0.5 + 0.05 * k, 10) for k in range(21)), _svals),
    "c_cap": Key(_num, 10.0, _pos),
    "eta": Key(_num, None),
    "samples": Key(_int, 201, _int_ge(2)),
    "portrait_n": Key(_int, 21, _int_ge(2)),
}

_DEFAULT_DOMAIN = {"bifurcate": "interval:pi"}
_DEFAULT_NODES = {"bifurcate": (401,)}


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any]
    explicit: frozenset = field(default_factory=frozenset)
    base_dir: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output(self) -> Path:
        return Path(self.values["output"])

    def _absolute(self, key, v):
        if key == "output":
            return str(Path(v).resolve())
        if isinstance(v, str) and v.startswith("csv:"):
            path = Path(v[4:])
            if not path.is_absolute():
                path = (self.base_dir or Path.cwd()) / path
            return "csv:" + str(path.resolve())
        return v

    def domain(self) -> DomainSpec:
        return parse_domain(self.values["domain"])

    def grid(self) -> Grid:
        nodes = self.values["nodes"]
        dom = self.domain()
        if len(nodes) == 1:
            return Grid(dom, nodes[0])
        if len(nodes) != dom.dimension:
            raise ConfigError(f"expected 1 or {dom.dimension} node counts", key="nodes")
        return Grid(dom, nodes)

    def to_text(self) -> str:
        lines = ["[run]", f"command = {self.command}"]
        for k in KEYS:
            if k == "command":
                continue
            v = self.values.get(k)
            if v is None:
                continue
            lines.append(f"{k} = {_fmt_value(self._absolute(k, v))}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, directory: Path) -> Path:
        path = Path(directory) / "resolved_config.txt"
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def _validate(raw: dict[str, tuple[str, int | None]], base_dir=None) -> RunConfig:
    if "command" not in raw:
        raise ConfigError(f"missing 'command'; valid commands: {', '.join(COMMANDS)}", key="command")
    cmd_text, cmd_line = raw["command"]
    if cmd_text not in COMMANDS:
        raise ConfigError(f"unknown command {cmd_text!r}; valid commands: {', '.join(COMMANDS)}",
                          key="command", line=cmd_line)
    values: dict[str, Any] = {}
    for key, spec in KEYS.items():
        if key == "command":
            continue
        if key in raw:
            text, line = raw[key]
            try:
                v = spec.parse(text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"cannot parse {text!r}: {exc}", key=key, line=line) from None
            if spec.check is not None:
                msg = spec.check(v)
                if msg:
                    raise ConfigError(f"value {text!r} out of range: {msg}", key=key, line=line)
            values[key] = v
        else:
            values[key] = spec.default
    if values["domain"] is None:
        values["domain"] = _DEFAULT_DOMAIN.get(cmd_text, "box:1,1,1")
    if values["nodes"] is None:
        values["nodes"] = _DEFAULT_NODES.get(cmd_text, (17,))
    try:
        parse_domain(values["domain"])
    except ValueError as exc:
        raise ConfigError(str(exc), key="domain", line=raw.get("domain", (None, None))[1]) from None
    if cmd_text in ("radial", "certify-nonunique") and "tol" in raw and values["tol"] > 1e-3:
        raise ConfigError("radial tolerance must be <= 1e-3", key="tol", line=raw["tol"][1])
    return RunConfig(cmd_text, values, frozenset(raw), base_dir)


def _raw_from_text(text: str) -> dict[str, tuple[str, int]]:
    raw: dict[str, tuple[str, int]] = {}
    seen_section = False
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if s != "[run]" or seen_section or raw:
                raise ConfigError(f"unexpected section header {s!r}; only a leading [run] is allowed", line=lineno)
            seen_section = True
            continue
        key, eq, value = s.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ConfigError(f"expected 'key = value', got {s!r}", line=lineno)
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in raw:
            raise ConfigError(f"duplicate key (first on line {raw[key][1]})", key=key, line=lineno)
        raw[key] = (value.strip(), lineno)
    return raw


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    """Strictly parse a flat ``key = value`` file (``#`` comments, optional ``[run]``).

    Relative ``csv:`` preset paths resolve against ``base_dir``.
    """
    return _validate(_raw_from_text(text), base_dir)


def parse_args(command: str | None, args: list[str], base: dict | None = None,
               base_dir: Path | None = None) -> RunConfig:
    """``--key value`` / ``--key=value`` pairs on top of optional parsed lines."""
    raw = dict(base or {})
    if command is not None:
        raw["command"] = (command, None)
    i = 0
    while i < len(args):
        a = args[i]
        if not a.startswith("--"):
            raise ConfigError(f"unexpected argument {a!r}; expected --key value")
        key, eq, value = a[2:].partition("=")
        if not eq:
            if i + 1 >= len(args):
                raise ConfigError("missing value", key=key)
            value = args[i + 1]
            i += 1
        key = key.replace("-", "_") if key.replace("-", "_") in KEYS else key
        if key not in KEYS:
            raise ConfigError("unknown key", key=key)
        raw[key] = (value, None)
        i += 1
    return _validate(raw, base_dir)
