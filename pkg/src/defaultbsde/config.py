"""Experiment configuration: a single JSON document, schema-checked before any work.

Errors carry the offending field and, where it can be found, the line in the
source file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re

import jsonschema

from .errors import ConfigError, ModelError

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "numerics", "utility"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["horizon", "s0", "sigma", "beta"],
            "additionalProperties": False,
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "s0": _vec,
                "mu": _vec,
                "sigma": _mat,
                "beta": _mat,
                "lambda": _vec,
                "volatility": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["constant", "price_dependent"]},
                        "s_ref": _vec,
                        "elasticity": _num,
                        "floor": {"type": "number", "exclusiveMinimum": 0},
                        "cap": {"type": "number", "exclusiveMinimum": 0},
                        "post_default_scale": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "ellipticity": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                "minItems": 2, "maxItems": 2},
                "coefficient_bound": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "regime": {
            "type": ["object", "null"],
            "required": ["q_matrix", "mu_by_regime", "lambda_by_regime", "initial_dist"],
            "additionalProperties": False,
            "properties": {"q_matrix": _mat, "mu_by_regime": _mat, "lambda_by_regime": _mat, "initial_dist": _vec},
        },
        "numerics": {
            "type": "object",
            "required": ["paths", "steps", "seed"],
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 2},
                "steps": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "basis_degree": {"type": "integer", "minimum": 0, "maximum": 3},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "utility": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["log", "power", "exponential"]},
                "gamma": _num,
                "x0": {"type": "number", "exclusiveMinimum": 0},
                "information": {"enum": ["full", "partial"]},
                "strategy": _num,
                "claim": {
                    "type": "object",
                    "required": ["id"],
                    "additionalProperties": False,
                    "properties": {
                        "id": {"enum": ["zero", "constant", "defaultable_bond", "put"]},
                        "params": {"type": "object"},
                    },
                },
            },
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"k": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}},
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "minItems": 1},
                "max_paths_csv": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "regime": None,
    "numerics": {"basis_degree": 2, "ridge": 1e-8},
    "utility": {"x0": 1.0, "information": "full"},
    "bounds": {"k": [1.0]},
    "outputs": {"directory": "out", "formats": ["csv", "json"], "max_paths_csv": 100},
}


def locate(text, path):
    """Best-effort source line of a JSON path (keys matched in order)."""
    if text is None:
        return None
    pos, line = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def _fail(message, path, text):
    field = ".".join(str(p) for p in path) or "<root>"
    line = locate(text, path)
    where = f" (line {line})" if line else ""
    raise ConfigError(f"{field}: {message}{where}", field=field, line=line)


def _merge_defaults(cfg):
    out = copy.deepcopy(cfg)
    for section, values in DEFAULTS.items():
        if values is None:
            out.setdefault(section, None)
        elif section not in out:
            out[section] = copy.deepcopy(values)
        else:
            for k, v in values.items():
                out[section].setdefault(k, copy.deepcopy(v))
    return out


def validate(cfg, text=None):
    """Schema and range checks; returns the config with defaults filled in."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        _fail(e.message, list(e.absolute_path), text)
    cfg = _merge_defaults(cfg)
    model, util = cfg["model"], cfg["utility"]
    n = len(model["s0"])
    if any(s <= 0 for s in model["s0"]):
        _fail("initial prices must be positive", ["model", "s0"], text)
    if len(model["sigma"]) != n or any(len(r) != n for r in model["sigma"]):
        _fail(f"must be a {n}x{n} matrix", ["model", "sigma"], text)
    if len(model["beta"]) != n or len({len(r) for r in model["beta"]}) != 1:
        _fail(f"must have {n} rows of equal length", ["model", "beta"], text)
    if any(b <= -1 for r in model["beta"] for b in r):
        _fail("jump sizes must exceed -1", ["model", "beta"], text)
    p = len(model["beta"][0])
    if cfg["regime"] is None:
        if "mu" not in model or "lambda" not in model:
            _fail("mu and lambda are required without a regime section", ["model"], text)
        if len(model["mu"]) != n:
            _fail(f"must have length {n}", ["model", "mu"], text)
        if len(model["lambda"]) != p:
            _fail(f"must have length {p}", ["model", "lambda"], text)
        if any(v < 0 for v in model["lambda"]):
            _fail("intensities must be nonnegative", ["model", "lambda"], text)
    else:
        reg = cfg["regime"]
        R = len(reg["q_matrix"])
        if any(len(r) != R for r in reg["q_matrix"]):
            _fail("must be square", ["regime", "q_matrix"], text)
        if len(reg["mu_by_regime"]) != R or any(len(r) != n for r in reg["mu_by_regime"]):
            _fail(f"must be {R}x{n}", ["regime", "mu_by_regime"], text)
        if len(reg["lambda_by_regime"]) != R or any(len(r) != p for r in reg["lambda_by_regime"]):
            _fail(f"must be {R}x{p}", ["regime", "lambda_by_regime"], text)
        if len(reg["initial_dist"]) != R:
            _fail(f"must have length {R}", ["regime", "initial_dist"], text)

    kind = util["kind"]
    gamma = util.get("gamma")
    if kind == "power":
        if gamma is None or not 0 < gamma < 1:
            _fail(f"power utility needs gamma in (0, 1), got {gamma}", ["utility", "gamma"], text)
    elif kind == "exponential":
        if gamma is None or not gamma > 0:
            _fail(f"exponential utility needs gamma > 0, got {gamma}", ["utility", "gamma"], text)
    if "claim" in util and kind != "exponential":
        _fail("claims are only priced under exponential utility", ["utility", "claim"], text)
    if util["information"] == "partial" and cfg["regime"] is None:
        _fail("partial information requires a regime section", ["utility", "information"], text)
    if any(not math.isfinite(k) for k in cfg["bounds"]["k"]):
        _fail("strategy bounds must be finite", ["bounds", "k"], text)
    if cfg["numerics"]["paths"] * cfg["numerics"]["steps"] > 5 * 10 ** 8:
        _fail("paths x steps exceeds the supported problem size", ["numerics", "paths"], text)
    return cfg


def load(path):
    """Read, parse and validate a config file.  Raises ConfigError."""
    with open(path) as fh:
        text = fh.read()
    return loads(text)


def loads(text):
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})", field="<root>", line=exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ConfigError("top-level JSON value must be an object", field="<root>", line=1)
    return validate(cfg, text)


def canonical(cfg):
    """Stable serialisation used for hashing and manifests."""
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


def build_model(cfg):
    """ModelSpec (with HiddenRegimeSpec when configured) from a validated config."""
    from .filtering import HiddenRegimeSpec
    from .market import ModelSpec, PriceDependentVolatility

    model = cfg["model"]
    regime = None
    try:
        if cfg.get("regime"):
            r = cfg["regime"]
            regime = HiddenRegimeSpec(q_matrix=r["q_matrix"], mu_by_regime=r["mu_by_regime"],
                                      lambda_by_regime=r["lambda_by_regime"], initial_dist=r["initial_dist"])
        sigma = model["sigma"]
        vol = model.get("volatility")
        if vol and vol.get("kind") == "price_dependent":
            sigma = PriceDependentVolatility(matrix=sigma, s_ref=vol.get("s_ref", model["s0"]),
                                             elasticity=vol.get("elasticity", 0.0), floor=vol.get("floor", 0.5),
                                             cap=vol.get("cap", 2.0),
                                             post_default_scale=vol.get("post_default_scale", 1.0))
        kwargs = {}
        if "ellipticity" in model:
            kwargs["ellipticity"] = tuple(model["ellipticity"])
        if "coefficient_bound" in model:
            kwargs["coefficient_bound"] = model["coefficient_bound"]
        return ModelSpec(horizon=model["horizon"], s0=model["s0"], mu=model.get("mu"), sigma=sigma,
                         beta=model["beta"], lam=model.get("lambda"), regime_model=regime, **kwargs)
    except ModelError as exc:
        section = "regime" if regime is None and cfg.get("regime") else "model"
        raise ConfigError(f"{section}: {exc}", field=section) from None
