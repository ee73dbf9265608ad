"""Experiment configuration: JSON schema, defaults, hashing and serialisation.

A config file holds one experiment:

    {"experiment": "sample-check",
     "geometry": {"L": 1.0, "m2": 1.0, "Nz": 1, "Ntau": 4},
     "cutoff": {"T": 8.0},
     "mc": {"n_samples": 50000, "seed": 1},
     "check": {...},
     "tolerances": {...},
     "output": "runs/sample-check"}

Every block is closed (unknown keys are rejected) and every tolerance must be
strictly positive.  T grids are always explicit lists.
"""
import copy
import hashlib
import json
import math

import jsonschema

EXPERIMENTS = ("sample-check", "covariance-check", "rn-density", "markov-check", "wick-moments",
               "renorm-constants", "divergence-fit", "besov-suite", "enhancement-moments", "boundary-measure",
               "bd-boundary", "bd-bulk", "glue-check", "markov-residual", "transfer-spectrum",
               "orlicz-trend")

_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_tgrid = {"type": "array", "items": _pos, "minItems": 1}

# experiment -> (check properties, tolerance names)
CHECKS = {
    "sample-check": ({"measures": {"type": "array", "minItems": 1,
                                   "items": {"enum": ["dirichlet-bulk", "periodic-bulk",
                                                      "boundary-infinite", "boundary-dtn"]}},
                      "batch": _posint},
                     ("z_max",)),
    "covariance-check": ({"n_pairs": _posint}, ("residual",)),
    "rn-density": ({}, ("residual",)),
    "markov-check": ({"n_inner": _posint, "nodes": _posint, "amplitude": _pos}, ("z_max",)),
    "wick-moments": ({"n_points": {"type": "integer", "minimum": 2},
                      "n_modes": {"type": "integer", "minimum": 6, "maximum": 8}},
                     ("z_centre", "z_pair", "isserlis")),
    "renorm-constants": ({"flags": {"type": "array", "items": {
        "enum": ["gamma", "delta_sigma", "delta_sigma_boundary", "delta0", "delta_M", "gamma_M"]}}},
        ()),
    "divergence-fit": ({"quadrature_order": _posint}, ("r2_min", "linf_ratio", "delta0_ratio")),
    "besov-suite": ({"grid": _posint, "n_fields": _posint},
                    ("reconstruction", "bernstein_factor", "hs_agreement")),
    "enhancement-moments": ({"upsilon_Nz": _posint, "upsilon_nodes": _posint},
                            ("band_boundary", "band_bulk", "band_upsilon")),
    "boundary-measure": ({"beta": _pos, "thin": _posint}, ("z_max",)),
    "bd-boundary": ({"identity_T": _pos, "n_identity": _posint, "n_train": _posint, "n_eval": _posint,
                     "n_direct": _posint, "steps": _posint},
                    ("z_max", "n_sigma", "gaussian_optimum")),
    "bd-bulk": ({"identity_T": _pos, "n_identity": _posint, "n_train": _posint, "n_eval": _posint,
                 "n_direct": _posint, "steps": _posint, "n_delta2": _posint, "K": _posint,
                 "G": _posint},
                ("z_max", "n_sigma", "gaussian_optimum")),
    "glue-check": ({"n_inner": _posint, "n_lhs": _posint, "variant": {"enum": ["interacting", "gaussian"]},
                    "nodes_per_unit": _posint},
                   ("z_max", "relative_stderr")),
    "markov-residual": ({"n_inner": _posint, "ell": _pos, "variant": {"enum": ["interacting", "gaussian"]}},
                        ("z_max",)),
    "transfer-spectrum": ({"tau": _pos, "nodes": _posint, "pairs": {
        "type": "array", "items": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}}},
        ("tower", "row_sum", "budget_factor", "e0_band")),
    "orlicz-trend": ({"tau": _pos, "alpha": _pos}, ("band",)),
}

DEFAULT_TOLERANCES = {
    "z_max": 3.0, "residual": 1e-10, "r2_min": 0.99, "linf_ratio": 1.5, "delta0_ratio": 2.0,
    "reconstruction": 1e-12, "bernstein_factor": 4.0, "hs_agreement": 1e-10,
    "band_boundary": 0.2, "band_bulk": 0.2, "band_upsilon": 0.2, "n_sigma": 3.0,
    "gaussian_optimum": 1e-4, "relative_stderr": 0.02, "tower": 1e-3, "row_sum": 1e-8,
    "budget_factor": 3.0, "e0_band": 0.3, "band": 0.3, "z_centre": 4.0, "z_pair": 5.0, "isserlis": 1e-12,
}

EXPERIMENT_TOLERANCES = {
    "sample-check": {"z_max": 5.0},
    "markov-check": {"z_max": 4.0},
    "boundary-measure": {"z_max": 4.0},
}


def _schema_for(name):
    props, tols = CHECKS[name]
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["experiment"],
        "properties": {
            "experiment": {"const": name},
            "description": {"type": "string"},
            "geometry": {"type": "object", "additionalProperties": False, "properties": {
                "L": _pos, "m2": _pos, "Nz": _posint, "Ntau": _posint,
                "tag": {"enum": ["cylinder-dirichlet", "cylinder-periodic", "torus-boundary"]}}},
            "cutoff": {"type": "object", "additionalProperties": False,
                       "properties": {"T": _pos, "T_grid": _tgrid}},
            "mc": {"type": "object", "additionalProperties": False, "properties": {
                "n_samples": _posint, "n_chains": _posint, "seed": {"type": "integer", "minimum": 0}}},
            "check": {"type": "object", "additionalProperties": False, "properties": props},
            "tolerances": {"type": "object", "additionalProperties": False,
                           "properties": {t: _pos for t in tols}},
            "output": {"type": "string"},
        },
    }


class ConfigError(ValueError):
    """Schema or semantic violation in an experiment config."""


def validate(cfg):
    """Raise ConfigError listing every violation; returns the config unchanged."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    name = cfg.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    v = jsonschema.Draft7Validator(_schema_for(name))
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.path))
    if errs:
        msgs = []
        for e in errs:
            path = ".".join(str(p) for p in e.path) or "<root>"
            msgs.append(f"{path}: {e.message}")
        raise ConfigError("; ".join(msgs))
    cut = cfg.get("cutoff", {})
    if "T" in cut and "T_grid" in cut:
        raise ConfigError("cutoff: give either T or T_grid, not both")
    return cfg


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return validate(cfg)


def tolerance(cfg, name):
    t = cfg.get("tolerances", {})
    if name in t:
        return float(t[name])
    return float(EXPERIMENT_TOLERANCES.get(cfg["experiment"], {}).get(name, DEFAULT_TOLERANCES[name]))


def with_override(cfg, path, value):
    """Copy of cfg with a dotted key set ('T' is short for cutoff.T)."""
    out = copy.deepcopy(cfg)
    if path == "T":
        out.setdefault("cutoff", {}).pop("T_grid", None)
        path = "cutoff.T"
    keys = path.split(".")
    d = out
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value
    return out


def canonical(obj):
    """Deterministic JSON text: sorted keys, 17 significant digits for floats."""
    return dumps(obj, indent=None)


def config_hash(cfg):
    """Git-style blob hash of the canonical config text."""
    data = canonical(cfg).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _plain(obj):
    """numpy scalars/arrays to Python types."""
    try:
        import numpy as np
    except ImportError:                       # pragma: no cover
        np = None
    if np is not None:
        if isinstance(obj, np.ndarray):
            return _plain(obj.tolist())
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.complexfloating):
            return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def dumps(obj, indent=1, _level=0):
    """JSON text with every float written at 17 significant digits.

    Non-finite floats are written as the strings "NaN", "Infinity" and
    "-Infinity" so that the output stays valid JSON."""
    obj = _plain(obj) if _level == 0 else obj
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = "," if indent is None else ","
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        s = fmt_float(obj)
        return s if math.isfinite(obj) else json.dumps(s)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k), ensure_ascii=False) + ":" + ("" if indent is None else " ")
                 + dumps(v, indent, _level + 1) for k, v in sorted(obj.items())]
        return "{" + pad + (sep + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[" + pad + (sep + pad).join(dumps(v, indent, _level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")
