"""INI-style scenario files.

Sections map one-to-one onto :class:`ScenarioConfig` parts. Floats accept
plain literals or ``pi/N`` / ``pi*x`` for mesh sizes; the writer emits
``repr`` floats so parse(write(cfg)) == cfg exactly.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import fields
from pathlib import Path

from .flux import FluxParams
from .gating import RateConstants
from .scenarios import (Diffusion, Geometry, InitialValues, Numerics, Output, PulseSpec, ScenarioConfig,
                        ScenarioError)


class ConfigError(ValueError):
    """Bad config file; ``key`` is "section.option", ``line`` 1-based when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__((", ".join(where) + ": " if where else "") + message)


# section -> (dataclass, required keys); GATING_INIT keys live in [initial]
_SECTIONS = {
    "geometry": (Geometry, None),
    "diffusion": (Diffusion, None),
    "membrane": (FluxParams, ("c1e", "c2e", "c3e", "c1c", "c2c", "c3c", "ks", "kp", "kn", "c_o")),
    "gating": (RateConstants, ()),
    "initial": (InitialValues, ("u", "b", "ue")),
    "pulse": (PulseSpec, ("kind",)),
    "numerics": (Numerics, ("dt", "t_end")),
    "output": (Output, ()),
}
_INITIAL_GATING = ("c1", "o", "c2")
_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}
_PI = re.compile(r"^\s*pi\s*([/*])\s*([0-9.eE+-]+)\s*$")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, by a plain scan of the file."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            out.setdefault((section, m.group(1).strip().lower()), no)
    return out


def _to_float(raw: str) -> float:
    m = _PI.match(raw)
    if m:
        v = float(m.group(2))
        return math.pi / v if m.group(1) == "/" else math.pi * v
    return float(raw)


def _convert(raw: str, kind):
    if kind is bool:
        v = _BOOL.get(raw.strip().lower())
        if v is None:
            raise ValueError(f"expected true/false, got {raw!r}")
        return v
    if kind is int:
        return int(raw)
    if kind is float:
        v = _to_float(raw)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return v
    if kind is tuple:
        return tuple(_to_float(x) for x in raw.replace(",", " ").split())
    return raw.strip()


def _field_kind(f) -> type:
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    return {"float": float, "int": int, "bool": bool, "tuple": tuple, "str": str}.get(t, str)


def parse_config_text(text: str, source: str = "<string>") -> ScenarioConfig:
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", f"{exc.section}.{exc.option}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError("duplicate section", exc.section, exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", None, exc.lineno) from None
    except configparser.ParsingError as exc:
        ln = exc.errors[0][0] if exc.errors else None
        raise ConfigError("unparseable line", None, ln) from None

    known = {"scenario", *_SECTIONS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", sec, lines.get((sec, None)))

    def where(sec, key=None):
        return lines.get((sec, key), lines.get((sec, None)))

    def need(sec):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]", sec)
        return cp[sec]

    name_sec = need("scenario")
    for key in name_sec:
        if key != "name":
            raise ConfigError("unknown key", f"scenario.{key}", where("scenario", key))
    if "name" not in name_sec:
        raise ConfigError("missing required key", "scenario.name", where("scenario"))

    parts = {}
    for sec, (cls, required) in _SECTIONS.items():
        body = need(sec) if sec not in ("gating", "output") or cp.has_section(sec) else {}
        flds = {f.name: f for f in fields(cls)}
        allowed = set(flds) - ({"gating"} if cls is InitialValues else set())
        if cls is InitialValues:
            allowed |= set(_INITIAL_GATING)
        vals, gate = {}, {}
        for key in body:
            if key not in allowed:
                raise ConfigError("unknown key", f"{sec}.{key}", where(sec, key))
            raw = body[key]
            kind = float if key in _INITIAL_GATING else _field_kind(flds[key])
            try:
                v = _convert(raw, kind)
            except ValueError as exc:
                raise ConfigError(f"type mismatch: {exc}", f"{sec}.{key}", where(sec, key)) from None
            (gate if key in _INITIAL_GATING else vals)[key] = v
        req = required if required is not None else tuple(flds)
        for key in req:
            if key not in vals:
                raise ConfigError("missing required key", f"{sec}.{key}", where(sec))
        if cls is InitialValues:
            missing = [k for k in _INITIAL_GATING if k not in gate]
            if missing:
                raise ConfigError("missing required key", f"initial.{missing[0]}", where(sec))
            vals["gating"] = tuple(gate[k] for k in _INITIAL_GATING)
        try:
            parts[sec] = cls(**vals)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), sec, where(sec)) from None

    cfg = ScenarioConfig(
        name=name_sec["name"].strip(),
        geometry=parts["geometry"], diffusion=parts["diffusion"], flux=parts["membrane"],
        rates=parts["gating"], initial=parts["initial"], pulse=parts["pulse"],
        numerics=parts["numerics"], output=parts["output"],
    )
    try:
        return cfg.validate()
    except ScenarioError as exc:
        line = None
        if exc.key is not None:
            sec, _, key = exc.key.partition(".")
            line = where(sec, key or None)
        raise ConfigError(f"invariant violated: {exc}", exc.key, line) from None


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def config_text(cfg: ScenarioConfig) -> str:
    out = ["[scenario]", f"name = {cfg.name}", ""]
    objs = {"geometry": cfg.geometry, "diffusion": cfg.diffusion, "membrane": cfg.flux, "gating": cfg.rates,
            "initial": cfg.initial, "pulse": cfg.pulse, "numerics": cfg.numerics, "output": cfg.output}
    for sec, obj in objs.items():
        out.append(f"[{sec}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if sec == "initial" and f.name == "gating":
                out += [f"{k} = {_fmt(float(x))}" for k, x in zip(_INITIAL_GATING, v)]
            else:
                out.append(f"{f.name} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)


def write_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(config_text(cfg))

