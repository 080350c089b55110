"""Pipeline configuration: TOML schema, built-in defaults, profiles and hashing.

A configuration is resolved in four layers, later ones winning:

1. global defaults,
2. defaults for the chosen ``model.kind``,
3. the ``desk`` or ``paper`` profile (slice models only),
4. the user's TOML file, then command-line overrides (``--seed``, ``--workers``).

Unknown keys anywhere are errors. The config hash is the SHA-256 of the
canonical JSON of the resolved config, excluding ``workers`` (which never
changes results).
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "PROFILES",
    "SLICE_TRUTH",
    "load_config",
    "resolve_config",
    "config_hash",
]

# synthetic truth for the slice study, ordered kx, ky per rock type
SLICE_TRUTH = [-14.5, -14.0, -16.0, -16.5, -13.5, -13.2, -13.8, -14.6, -14.8, -14.9, -15.5, -15.5]

U64 = 2 ** 64 - 1


class ConfigError(ValueError):
    """Invalid configuration, reported before any model is run."""


_DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "mcmc": {"walkers": 24, "steps": 3000, "burn_in": 1000, "ensembles": 1, "stretch_a": 2.0,
             "thin": 1, "init": "prior", "mode_starts": 6, "init_radius": 1e-3},
    "bae": {"q": 200, "policy": "replace", "source": "posterior-informed", "recheck": False},
    "predict": {"draws": 200, "noisy": False, "quantiles": [0.025, 0.25, 0.5, 0.75, 0.975]},
    "report": {"bins": 30, "prior_draws": 10000},
    "data": {"synthesize": True},
}

_KIND_DEFAULTS = {
    "polynomial": {
        "model": {"polynomial": {"m": 30, "n": 2, "p": 1, "t_min": 0.0, "t_max": 1.0, "identical": False}},
        "prior": {"kind": "gaussian", "mean": [1.0, 1.0], "sd": 1.0},
        "noise": {"multilevel": {"blocks": [10, 10, 10], "delta_e": 1.2, "c": 0.001}},
        "data": {"truth": [0.2, 2.0]},
        "mcmc": {"walkers": 32, "steps": 5000, "burn_in": 1000},
        "bae": {"q": 2000},
    },
    "slice": {
        "model": {"slice": {}},
        "prior": {"kind": "uniform", "lower": -17.0, "upper": -12.0},
        "noise": {"sd": 5.0},
        "data": {"truth": SLICE_TRUTH},
        "mcmc": {"init": "mode"},
    },
    "external": {
        "model": {"external": {"timeout": 300.0}},
        "noise": {"sd": 1.0},
    },
}

PROFILES = {
    "desk": {
        "model": {"fine": {"nz": 40, "nx": 50}, "coarse": {"nz": 8, "nx": 10}},
        "mcmc": {"walkers": 24, "steps": 20000, "burn_in": 5000, "thin": 10},
        "bae": {"q": 200},
    },
    "paper": {
        "model": {"fine": {"nz": 80, "nx": 100}, "coarse": {"nz": 16, "nx": 20}},
        "mcmc": {"walkers": 300, "steps": 600, "burn_in": 100},
        "bae": {"q": 1000},
    },
}

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num, "minItems": 1}
_num_or_vec = {"oneOf": [_num, _vec]}
_matrix = {"type": "array", "items": _vec, "minItems": 1}
_argv = {"type": "array", "items": {"type": "string"}, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


_SLICE_PHYSICS = {k: _num for k in ("width", "depth", "top_temperature", "basal_heat_flux", "source_mass_flux",
                                     "source_enthalpy", "thermal_conductivity", "porosity", "top_relief")}
_SLICE_PHYSICS["source_interval"] = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": U64},
    "workers": _pos_int,
    "output": {"type": "string"},
    "model": _obj({
        "kind": {"enum": ["polynomial", "slice", "external"]},
        "fine": _obj({"nz": _pos_int, "nx": _pos_int, "command": _argv}),
        "coarse": _obj({"nz": _pos_int, "nx": _pos_int, "command": _argv}),
        "slice": _obj(_SLICE_PHYSICS),
        "polynomial": _obj({"m": _pos_int, "n": _pos_int, "p": _pos_int, "t_min": _num, "t_max": _num,
                            "identical": {"type": "boolean"}}),
        "external": _obj({"input_dim": _pos_int, "output_dim": _pos_int, "timeout": {"type": "number", "exclusiveMinimum": 0}}),
    }, required=["kind"]),
    "prior": _obj({
        "kind": {"enum": ["gaussian", "uniform"]},
        "mean": _num_or_vec, "sd": _num_or_vec, "cov": _matrix,
        "lower": _num_or_vec, "upper": _num_or_vec,
    }, required=["kind"]),
    "noise": _obj({
        "mean": _num_or_vec,
        "sd": _num_or_vec,
        "cov_file": {"type": "string"},
        "multilevel": _obj({"blocks": {"type": "array", "items": _pos_int, "minItems": 1},
                            "delta_e": {"type": "number", "exclusiveMinimum": 0},
                            "c": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "noise_fraction": {"type": "number", "exclusiveMinimum": 0}},
                           required=["blocks", "delta_e", "c"]),
    }),
    "data": _obj({"synthesize": {"type": "boolean"}, "truth": _vec, "path": {"type": "string"}}),
    "mcmc": _obj({
        "walkers": {"type": "integer", "minimum": 4, "multipleOf": 2},
        "steps": _pos_int,
        "burn_in": {"type": "integer", "minimum": 0},
        "ensembles": _pos_int,
        "stretch_a": {"type": "number", "exclusiveMinimum": 1},
        "thin": _pos_int,
        "init": {"enum": ["prior", "mode"]},
        "mode_starts": _pos_int,
        "init_radius": {"type": "number", "exclusiveMinimum": 0},
    }),
    "bae": _obj({
        "q": {"type": "integer", "minimum": 2},
        "policy": {"enum": ["replace", "drop"]},
        "source": {"enum": ["prior-based", "posterior-informed"]},
        "recheck": {"type": "boolean"},
    }),
    "predict": _obj({"draws": _pos_int, "noisy": {"type": "boolean"},
                     "quantiles": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                                   "minItems": 1}}),
    "report": _obj({"bins": _pos_int, "prior_draws": _pos_int}),
}, required=["model"])


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _validate(cfg: dict, where: str):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {path}: {exc.message}") from None


def _check_semantics(cfg: dict, base_dir: Path):
    kind = cfg["model"]["kind"]
    model = cfg["model"]
    if kind == "slice":
        for side in ("fine", "coarse"):
            sub = model.get(side, {})
            if "command" in sub or not {"nz", "nx"} <= set(sub):
                raise ConfigError(f"model.{side} needs nz and nx (and no command) for a slice model")
            if sub["nz"] < 4 or sub["nx"] < 4:
                raise ConfigError(f"model.{side}: need nz, nx >= 4")
    elif kind == "external":
        for side in ("fine", "coarse"):
            sub = model.get(side, {})
            if set(sub) != {"command"}:
                raise ConfigError(f"model.{side} needs exactly a command for an external model")
        ext = model.get("external", {})
        if not {"input_dim", "output_dim"} <= set(ext):
            raise ConfigError("model.external needs input_dim and output_dim")
    else:
        if "fine" in model or "coarse" in model:
            raise ConfigError("model.fine / model.coarse do not apply to polynomial models")
        poly = model["polynomial"]
        if not poly["identical"] and not 1 <= poly["p"] < poly["n"]:
            raise ConfigError("model.polynomial: need 1 <= p < n")
    for key in ("slice", "polynomial", "external"):
        if key in model and key != kind and model[key]:
            raise ConfigError(f"model.{key} given but model.kind is {kind!r}")

    prior = cfg["prior"]
    allowed = {"gaussian": {"kind", "mean", "sd", "cov"}, "uniform": {"kind", "lower", "upper"}}[prior["kind"]]
    extra = set(prior) - allowed
    if extra:
        raise ConfigError(f"prior: keys {sorted(extra)} do not apply to a {prior['kind']} prior")
    if prior["kind"] == "gaussian" and ("sd" in prior) == ("cov" in prior):
        raise ConfigError("prior: give exactly one of sd and cov")
    if prior["kind"] == "uniform" and not {"lower", "upper"} <= set(prior):
        raise ConfigError("prior: uniform prior needs lower and upper")

    noise = cfg["noise"]
    forms = [k for k in ("sd", "cov_file", "multilevel") if k in noise]
    if len(forms) != 1:
        raise ConfigError(f"noise: give exactly one of sd, cov_file, multilevel (got {forms})")
    if "cov_file" in noise:
        path = (base_dir / noise["cov_file"]).resolve()
        if not path.is_file():
            raise ConfigError(f"noise.cov_file not found: {path}")
        noise["cov_file"] = str(path)

    data = cfg["data"]
    if "path" in data:
        if data.get("synthesize", False):
            raise ConfigError("data: give either a path or synthesize = true, not both")
        path = (base_dir / data["path"]).resolve()
        if not path.is_file():
            raise ConfigError(f"data.path not found: {path}")
        data["path"] = str(path)
    elif not data.get("synthesize", False):
        raise ConfigError("data: give a path or set synthesize = true")
    elif "truth" not in data:
        raise ConfigError("data: synthesizing requires a truth vector")

    mc = cfg["mcmc"]
    if mc["steps"] <= mc["burn_in"]:
        raise ConfigError("mcmc.steps must exceed mcmc.burn_in")
    q = cfg["predict"]["quantiles"]
    if sorted(q) != q:
        raise ConfigError("predict.quantiles must be increasing")


def resolve_config(user: dict, profile: str = "desk", seed=None, workers=None, base_dir=".") -> dict:
    """Layer defaults, kind defaults, profile and ``user``; validate the result."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if not isinstance(user, dict):
        raise ConfigError("config must be a table")
    user = dict(user)
    user.setdefault("model", {"kind": "slice"})
    _validate(user, "config file")
    kind = user["model"]["kind"]
    cfg = _merge(_DEFAULTS, _KIND_DEFAULTS[kind])
    if kind == "slice":
        cfg = _merge(cfg, PROFILES[profile])
    user_data = user.get("data", {})
    if "path" in user_data:
        # observed data replace the synthetic defaults
        cfg["data"].pop("truth", None)
        cfg["data"]["synthesize"] = False
    cfg = _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if workers is not None:
        cfg["workers"] = int(workers)
    _validate(cfg, "resolved config")
    _check_semantics(cfg, Path(base_dir))
    return cfg


def load_config(path=None, profile: str = "desk", seed=None, workers=None) -> dict:
    """Read a TOML file (or use pure defaults when ``path`` is None) and resolve it."""
    if path is None:
        return resolve_config({}, profile, seed, workers)
    path = Path(path)
    try:
        with path.open("rb") as fh:
            user = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return resolve_config(user, profile, seed, workers, base_dir=path.parent)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON of ``cfg`` without ``workers`` and ``output``."""
    core = {k: v for k, v in cfg.items() if k not in ("workers", "output")}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
