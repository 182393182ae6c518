"""YAML run configuration.

A configuration document describes one scenario: the plant and its model
structure, the controller, the exogenous signals, the sampling grid, the
prediction models to fit, the optimizer settings and the Monte-Carlo
experiment.  It may start from a built-in scenario with
``scenario: A`` (or ``B``, ``C``) and override individual sections;
sections given in full replace the built-in ones key by key.

Poles are written as ``[re, im]`` pairs and both members of a complex
pair must be listed.  All quantities are SI (seconds, rad/s).  Documents
are validated against :data:`SCHEMA` before anything is computed, and
unknown keys are rejected.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

from .harness import BUILTIN_SCENARIOS, PREDICTOR_KINDS, PredictorSpec, Scenario
from .lm import LMOptions
from .models import ModelStructure, TransferFunction
from .placement import PoleSet
from .predictors import HOLDS
from .simulate import SignalSpec

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "dump_config", "load_config", "parse_config", "scenario_to_config"]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_pole = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}
_poles = {"type": "array", "items": _pole}
_hold = {"enum": list(HOLDS)}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_controller = _obj(
    {
        "num": {"type": "array", "items": _number, "minItems": 1},
        "den": {"type": "array", "items": _number, "minItems": 1},
        "zeros": _poles,
        "poles": _poles,
        "gain": _number,
    }
)

_signal = _obj(
    {
        "kind": {"enum": ["square_wave", "constant", "zoh_gaussian", "zero"]},
        "amplitude": _number,
        "period": _pos,
        "value": _number,
        "mean": _number,
        "std": {"type": "number", "minimum": 0},
        "hold": _pos,
        "seed": {"type": ["integer", "null"], "minimum": 0, "maximum": 2**64 - 1},
        "stream": {"type": "integer", "minimum": 0},
    },
    required=["kind"],
)

SCHEMA = _obj(
    {
        "scenario": {"enum": sorted(BUILTIN_SCENARIOS)},
        "name": {"type": "string"},
        "model": _obj({"den_degree": _count, "num_degree": {"type": "integer", "minimum": 0}}),
        "plant": _obj({"theta": {"type": "array", "items": _number, "minItems": 1}}),
        "controller": {"oneOf": [{"type": "null"}, _controller]},
        "signals": _obj({k: _signal for k in ("r_u", "r_y", "w", "eta")}),
        "sampling": _obj(
            {
                "h": _pos,
                "N": {"type": "integer", "minimum": 2},
                "warmup": {"type": "integer", "minimum": 0},
                "shadow": {"type": "boolean"},
            }
        ),
        "predictor": _obj(
            {
                "hold": {
                    "oneOf": [_hold, {"type": "array", "items": _hold, "minItems": 2, "maxItems": 2}]
                },
                "models": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj(
                        {
                            "kind": {"enum": list(PREDICTOR_KINDS)},
                            "poles": _poles,
                            "label": {"type": "string"},
                            "virtual_controller": _controller,
                            "pole_scale": _pos,
                        },
                        required=["kind"],
                    ),
                },
            }
        ),
        "optimizer": _obj(
            {
                "max_iterations": _count,
                "cost_tolerance": _pos,
                "step_tolerance": _pos,
                "initial_damping": _pos,
                "damping_up": {"type": "number", "exclusiveMinimum": 1},
                "damping_down": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "fd_step": _pos,
                "max_damping": _pos,
                "random_starts": {"type": "integer", "minimum": 0},
            }
        ),
        "experiment": _obj(
            {
                "trials": _count,
                "base_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "workers": _count,
                "sweep_real_parts": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMaximum": 0},
                    "minItems": 1,
                },
                "bode": _obj({"omega_min": _pos, "omega_max": _pos, "points": {"type": "integer", "minimum": 2}}),
            }
        ),
        "output": _obj({"directory": {"type": "string"}}),
    }
)


@dataclass
class RunConfig:
    """Validated configuration: a :class:`Scenario` plus CLI-level settings."""

    scenario: Scenario
    shadow: bool = True
    sweep_real_parts: tuple = (-0.5, -3.0, -10.0)
    omega: np.ndarray = field(default_factory=lambda: np.logspace(-1, 3, 200))
    pole_scale: dict = field(default_factory=dict)
    workers: int = 1
    output_dir: Optional[str] = None
    document: dict = field(default_factory=dict)


def _pairs_to_poles(pairs) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs])


def _controller_from(doc) -> TransferFunction:
    if doc is None:
        return TransferFunction.zero()
    has_poly = "num" in doc or "den" in doc
    has_zpk = any(k in doc for k in ("zeros", "poles", "gain"))
    if has_poly == has_zpk:
        raise ConfigError("controller needs either num/den or zeros/poles/gain")
    if has_poly:
        if "num" not in doc or "den" not in doc:
            raise ConfigError("controller needs both num and den")
        return TransferFunction.from_descending(doc["num"], doc["den"])
    if "gain" not in doc:
        raise ConfigError("controller needs a gain")
    return TransferFunction.zpk(
        _pairs_to_poles(doc.get("zeros", [])), _pairs_to_poles(doc.get("poles", [])), doc["gain"]
    )


def _signal_from(doc: dict) -> SignalSpec:
    allowed = {
        "square_wave": {"amplitude", "period"},
        "constant": {"value"},
        "zoh_gaussian": {"mean", "std", "hold", "seed", "stream"},
        "zero": set(),
    }[doc["kind"]]
    extra = set(doc) - allowed - {"kind"}
    if extra:
        raise ConfigError(f"signal kind {doc['kind']!r} does not take {sorted(extra)}")
    required = {"square_wave": {"period"}, "constant": {"value"}, "zoh_gaussian": {"std", "hold"}, "zero": set()}
    missing = required[doc["kind"]] - set(doc)
    if missing:
        raise ConfigError(f"signal kind {doc['kind']!r} needs {sorted(missing)}")
    return SignalSpec(**doc)


def _poles_to_pairs(poles: PoleSet) -> list:
    return [[float(p.real), float(p.imag)] for p in poles.poles]


def _controller_to_doc(tf: TransferFunction):
    if tf.num.is_zero():
        return None
    return {"num": tf.num.descending().tolist(), "den": tf.den.descending().tolist()}


def scenario_to_config(sc: Scenario) -> dict:
    """Configuration document equivalent to ``sc`` (round-trips through :func:`parse_config`)."""
    models = []
    for p in sc.predictors:
        m = {"kind": p.kind, "label": p.label}
        if p.poles is not None:
            m["poles"] = _poles_to_pairs(p.poles)
        if p.virtual_controller is not None:
            m["virtual_controller"] = _controller_to_doc(p.virtual_controller)
        models.append(m)
    opts = {f.name: getattr(sc.options, f.name) for f in fields(LMOptions)}
    opts["random_starts"] = sc.random_starts
    signals = {}
    for name, spec in sc.signals.items():
        d = spec.to_dict()
        signals[name] = d
    return {
        "name": sc.name,
        "model": {"den_degree": sc.structure.den_degree, "num_degree": sc.structure.num_degree},
        "plant": {"theta": sc.theta.tolist()},
        "controller": _controller_to_doc(sc.controller),
        "signals": signals,
        "sampling": {"h": sc.h, "N": sc.N, "warmup": sc.warmup},
        "predictor": {"hold": list(sc.hold) if isinstance(sc.hold, tuple) else sc.hold, "models": models},
        "optimizer": opts,
        "experiment": {"trials": sc.trials, "base_seed": sc.base_seed},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k in ("signals", "predictor", "optimizer", "experiment", "sampling", "model", "output") and isinstance(
            out.get(k), dict
        ) and isinstance(v, dict):
            out[k] = _merge(out[k], v) if k != "signals" else {**out[k], **copy.deepcopy(v)}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def parse_config(doc) -> RunConfig:
    """Validate a configuration mapping and build the :class:`RunConfig`."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _validate(doc)
    if "scenario" in doc:
        base = scenario_to_config(BUILTIN_SCENARIOS[doc["scenario"]]())
        full = _merge(base, {k: v for k, v in doc.items() if k != "scenario"})
    else:
        full = copy.deepcopy(doc)
    _validate(full)
    for key in ("model", "plant", "sampling", "predictor"):
        if key not in full:
            raise ConfigError(f"config needs a {key!r} section (or a built-in 'scenario')")

    try:
        ms = ModelStructure(full["model"]["den_degree"], full["model"].get("num_degree", 0))
        theta = np.asarray(full["plant"]["theta"], dtype=float)
        if theta.size != ms.n_params:
            raise ConfigError(f"plant theta needs {ms.n_params} entries for this model, got {theta.size}")
        controller = _controller_from(full.get("controller"))
        signals = {k: _signal_from(v) for k, v in full.get("signals", {}).items()}
        samp = full["sampling"]
        for k in ("h", "N"):
            if k not in samp:
                raise ConfigError(f"sampling needs {k!r}")
        pred = full["predictor"]
        if "models" not in pred:
            raise ConfigError("predictor needs a 'models' list")
        specs, scales = [], {}
        for m in pred["models"]:
            vc = _controller_from(m["virtual_controller"]) if "virtual_controller" in m else None
            poles = PoleSet.from_pairs(m["poles"]) if "poles" in m else None
            spec = PredictorSpec(m["kind"], poles, vc, m.get("label", ""))
            specs.append(spec)
            if "pole_scale" in m:
                scales[spec.label] = float(m["pole_scale"])
        labels = [s.label for s in specs]
        if len(set(labels)) != len(labels):
            raise ConfigError("predictor labels must be unique")
        hold = pred.get("hold", "eno3")
        hold = tuple(hold) if isinstance(hold, list) else hold
        oopts = dict(full.get("optimizer", {}))
        random_starts = oopts.pop("random_starts", 1)
        exp = full.get("experiment", {})
        sc = Scenario(
            name=full.get("name", doc.get("scenario", "custom")),
            structure=ms,
            theta=theta,
            controller=controller,
            signals=signals,
            h=float(samp["h"]),
            N=int(samp["N"]),
            warmup=int(samp.get("warmup", 0)),
            predictors=tuple(specs),
            trials=int(exp.get("trials", 20)),
            base_seed=int(exp.get("base_seed", 0)),
            hold=hold,
            options=LMOptions(**oopts),
            random_starts=int(random_starts),
        )
        bode = exp.get("bode", {})
        lo, hi, pts = bode.get("omega_min", 0.1), bode.get("omega_max", 1e3), bode.get("points", 200)
        if not hi > lo:
            raise ConfigError("bode omega_max must exceed omega_min")
        return RunConfig(
            scenario=sc,
            shadow=bool(samp.get("shadow", True)),
            sweep_real_parts=tuple(float(r) for r in exp.get("sweep_real_parts", (-0.5, -3.0, -10.0))),
            omega=np.logspace(np.log10(lo), np.log10(hi), int(pts)),
            pole_scale=scales,
            workers=int(exp.get("workers", 1)),
            output_dir=full.get("output", {}).get("directory"),
            document=full,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config error: {exc}") from None


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent-only floats such as ``1e-4``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def dump_config(doc: dict) -> str:
    """Serialize a configuration mapping as YAML."""
    return yaml.safe_dump(doc, sort_keys=False)


def load_config(path) -> RunConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return parse_config(doc)
