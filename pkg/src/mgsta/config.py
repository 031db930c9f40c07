"""JSON run configuration: loading, dotted overrides and object construction.

A configuration is a plain dict with the sections ``plant``, ``design``,
``gains``, ``search``, ``solver``, ``simulation``, ``disturbance`` and
``scenario``. The plant is either an explicit vertex list (row-major nested
arrays) or ``{"trailer": {...}}`` for the built-in benchmark.
"""

from __future__ import annotations

import copy
import json
from importlib import resources

import numpy as np

from . import trailer
from .errors import InvalidParams
from .model import DesignConfig, PolytopicPlant, make_polytope
from .sdp import SolverSettings
from .sim import LinearExosystem, SimConfig
from .synthesis import SearchGrid

DEFAULT_CONFIG = "trailer.json"


def default_config() -> dict:
    text = resources.files("mgsta").joinpath("data", DEFAULT_CONFIG).read_text()
    return json.loads(text)


def load_config(path=None) -> dict:
    if path is None:
        return default_config()
    with open(path) as fh:
        return json.load(fh)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, assignments) -> dict:
    """Return a copy of ``cfg`` with ``key.sub=value`` assignments applied.

    Values are parsed as JSON when possible (numbers, lists, booleans) and
    kept as strings otherwise. Intermediate sections are created on demand.
    """
    out = copy.deepcopy(cfg)
    for item in assignments or ():
        if "=" not in item:
            raise InvalidParams(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise InvalidParams(f"override {item!r} has an empty key")
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = {}
                node[p] = nxt
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return out


def is_trailer(cfg: dict) -> bool:
    return "trailer" in cfg.get("plant", {})


def trailer_params(cfg: dict) -> trailer.TrailerParams:
    return trailer.TrailerParams.from_dict(cfg["plant"].get("trailer") or {})


def build_plant(cfg: dict) -> PolytopicPlant:
    plant = cfg.get("plant")
    if not plant:
        raise InvalidParams("configuration has no 'plant' section")
    if "trailer" in plant:
        return trailer.build_trailer_polytope(trailer_params(cfg))
    if "vertices" not in plant:
        raise InvalidParams("'plant' needs either 'vertices' or 'trailer'")
    return make_polytope(plant["vertices"])


def build_design(cfg: dict, plant: PolytopicPlant) -> DesignConfig:
    d = dict(cfg.get("design", {}))
    if is_trailer(cfg):
        zeta0, sigma0, eta0 = trailer.initial_error_state(trailer_params(cfg))
        H, J = trailer.cost_matrices(plant.r, plant.m)
    else:
        zeta0, sigma0, eta0 = np.zeros(plant.r), np.zeros(plant.n), np.zeros(plant.n)
        H, J = np.eye(plant.r), np.zeros((plant.r, plant.m))
    defaults = {"zeta0": zeta0, "sigma0": sigma0, "eta0": eta0, "H": H, "J": J}
    for key, val in defaults.items():
        if key not in d or isinstance(d[key], str):
            d[key] = val
    missing = {"gamma", "alpha", "rho", "omega"} - set(d)
    if missing:
        raise InvalidParams(f"design section lacks {sorted(missing)}")
    design = DesignConfig(**{k: d[k] for k in ("gamma", "alpha", "rho", "omega", "H", "J", "zeta0", "sigma0", "eta0")})
    design.validate_for(plant)
    return design


def build_solver(cfg: dict) -> SolverSettings:
    return SolverSettings(**cfg.get("solver", {}))


def build_grid(cfg: dict) -> SearchGrid:
    s = dict(cfg.get("search", {}))
    for k in ("alpha_range", "rho_range"):
        if k in s:
            s[k] = tuple(float(v) for v in s[k])
    return SearchGrid(**s)


def build_sim(cfg: dict) -> SimConfig:
    return SimConfig(**cfg.get("simulation", {}))


def build_gains(cfg: dict, alpha: float | None = None) -> dict | None:
    """Gains from the ``gains`` section; ``"reference"`` selects the printed trailer design."""
    g = cfg.get("gains")
    if g is None:
        return None
    if g == "reference":
        return trailer.default_gains(alpha if alpha is not None else cfg.get("design", {}).get("alpha", 11.0))
    if not isinstance(g, dict):
        raise InvalidParams("'gains' must be 'reference' or a mapping with K0, K1, K2, alpha")
    return {
        "K0": np.atleast_2d(np.asarray(g["K0"], float)),
        "K1": np.atleast_2d(np.asarray(g["K1"], float)),
        "K2": np.atleast_2d(np.asarray(g["K2"], float)),
        "alpha": float(g.get("alpha", alpha if alpha is not None else cfg["design"]["alpha"])),
    }


def build_disturbance(cfg: dict, n: int) -> LinearExosystem:
    """Sinusoidal matched disturbance ``amp sin(freq t + phase) + offset`` per channel (zero if absent)."""
    d = cfg.get("disturbance")
    if not d:
        return LinearExosystem.zero(n)
    amp = np.broadcast_to(np.asarray(d.get("amp", 0.0), float), (n,))
    return LinearExosystem.sinusoid(
        amp, d.get("freq", 0.0), d.get("phase"), d.get("offset"), delta_declared=d.get("delta")
    )


def build_scenario(cfg: dict) -> trailer.ScenarioConfig:
    s = dict(cfg.get("scenario", {}))
    s["params"] = trailer_params(cfg)
    design = cfg.get("design", {})
    for k in ("gamma", "omega", "alpha", "rho"):
        if k in design and k not in s:
            s[k] = float(design[k])
    return trailer.ScenarioConfig.from_dict(s)
