"""Problem-spec config files: INI sections with key/value pairs.

Schema (full reference in the README):

    [problem]           required
    family = ou_quadratic | pollution | affine | custom_polynomial
    name   = free text  (optional)

    [params]            family parameters, numbers or comma lists
    [u_grid] / [v_grid] lo, hi, count   -- or values = comma list
    [box]               lo, hi          -- per-dimension comma lists
    [grid]              nodes = N       -- solver grid resolution
    [assumptions]       K, C_b, C_sigma, C_f, sigma_bound overrides

Unknown sections or keys are errors; value errors name the section and key.
Syntax errors surface configparser's line numbers.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .model import ControlGrid, ModelError, ProblemSpec, make_spec

_KNOWN_SECTIONS = {"problem", "params", "u_grid", "v_grid", "box", "grid", "assumptions"}


class ConfigError(ValueError):
    pass


@dataclass
class LoadedProblem:
    spec: ProblemSpec
    grid_nodes: int | None = None
    raw: dict = field(default_factory=dict)


def _parse_scalar_or_list(section: str, key: str, text: str):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected number(s), got {text!r}") from None
    if not vals:
        raise ConfigError(f"[{section}] {key}: empty value")
    return vals[0] if len(vals) == 1 else vals


def parse_problem_text(text: str, source: str = "<config>") -> LoadedProblem:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (family params like C vs c0)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    unknown = set(cp.sections()) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    if not cp.has_section("problem"):
        raise ConfigError("missing [problem] section")
    if not cp.has_option("problem", "family"):
        raise ConfigError("[problem] family: required")
    family = cp.get("problem", "family").strip()
    name = cp.get("problem", "name", fallback=None)

    params = {}
    if cp.has_section("params"):
        for key, val in cp.items("params"):
            params[key] = _parse_scalar_or_list("params", key, val)

    def control_grid(section: str, label: str):
        if not cp.has_section(section):
            return None
        keys = dict(cp.items(section))
        if "values" in keys:
            vals = _parse_scalar_or_list(section, "values", keys["values"])
            vals = np.atleast_1d(vals)[:, None]
            return ControlGrid(vals, label)
        for k in ("lo", "hi", "count"):
            if k not in keys:
                raise ConfigError(f"[{section}] {k}: required (or give `values`)")
        lo = _parse_scalar_or_list(section, "lo", keys["lo"])
        hi = _parse_scalar_or_list(section, "hi", keys["hi"])
        count = int(float(keys["count"]))
        return ControlGrid.linspace(float(lo), float(hi), count, label)

    u_grid = control_grid("u_grid", "U")
    v_grid = control_grid("v_grid", "V")

    box = None
    if cp.has_section("box"):
        keys = dict(cp.items("box"))
        for k in ("lo", "hi"):
            if k not in keys:
                raise ConfigError(f"[box] {k}: required")
        lo = np.atleast_1d(_parse_scalar_or_list("box", "lo", keys["lo"]))
        hi = np.atleast_1d(_parse_scalar_or_list("box", "hi", keys["hi"]))
        if lo.size != hi.size:
            raise ConfigError("[box] lo and hi must have the same length")
        box = np.stack([lo, hi], axis=1)

    assumptions = {}
    if cp.has_section("assumptions"):
        for key, val in cp.items("assumptions"):
            if key not in ("K", "C_b", "C_sigma", "C_f", "sigma_bound"):
                raise ConfigError(f"[assumptions] {key}: unknown key")
            assumptions[key] = float(_parse_scalar_or_list("assumptions", key, val))

    grid_nodes = None
    if cp.has_section("grid"):
        keys = dict(cp.items("grid"))
        if "nodes" in keys:
            grid_nodes = int(float(keys["nodes"]))

    try:
        spec = make_spec(
            family, params, name=name, u_grid=u_grid, v_grid=v_grid, box=box,
            assumptions=assumptions or None,
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from None
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    return LoadedProblem(spec=spec, grid_nodes=grid_nodes, raw=raw)


def load_problem(path: str) -> LoadedProblem:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_problem_text(text, source=path)
