"""JSON Schemas for the four config kinds kept under configs/."""
from typing import Any, Dict

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from app.core.exceptions import ConfigError

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_name = {"type": "string", "minLength": 1}

_bad_data = {
    "type": "object",
    "propertyNames": {"enum": ["delta", "omega", "U_t", "phi"]},
    "additionalProperties": {
        "type": "object",
        "required": ["events"],
        "properties": {
            "events": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["start_time"],
                    "properties": {
                        "start_time": {"type": "number", "minimum": 0},
                        "count": {"type": "integer", "minimum": 1},
                        "magnitude": _number,
                        "mode": {"enum": ["add", "replace"]},
                    },
                    "additionalProperties": False,
                },
            },
        },
        "additionalProperties": False,
    },
}

MACHINE_SCHEMA = {
    "type": "object",
    "required": ["T_J", "D", "T_d0p", "T_q0p", "X_d", "X_q", "X_dp", "X_qp"],
    "properties": {
        "name": _name,
        "T_J": _positive, "D": {"type": "number", "minimum": 0},
        "T_d0p": _positive, "T_q0p": _positive,
        "X_d": _positive, "X_q": _positive, "X_dp": _positive, "X_qp": _positive,
    },
    "additionalProperties": False,
}

_noise_spec = {
    "type": "object",
    "required": ["family", "scale"],
    "properties": {
        "family": {"enum": ["gaussian", "gaussian_biased", "laplace", "cauchy"]},
        "loc": _number,
        "scale": _positive,
        "units": {"enum": ["deg", "pu"]},
    },
    "additionalProperties": False,
}

PROFILE_SCHEMA = {
    "type": "object",
    "required": ["name", "channels"],
    "properties": {
        "name": _name,
        "seed": {"type": "integer", "minimum": 0},
        "prng": {"type": "string"},
        "channels": {
            "type": "object",
            "required": ["delta", "omega", "U_t", "phi"],
            "properties": {c: _noise_spec for c in ("delta", "omega", "U_t", "phi")},
            "additionalProperties": False,
        },
        "bad_data": _bad_data,
    },
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "params_ref", "duration", "operating_point"],
    "properties": {
        "name": _name,
        "params_ref": _name,
        "duration": _positive,
        "step": _positive,
        "operating_point": {
            "type": "object",
            "required": ["U_t", "P_target"],
            "properties": {"U_t": _positive, "phi_deg": _number, "P_target": _number, "Q_target": _number},
            "additionalProperties": False,
        },
        "disturbance": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["signal", "kind", "start", "end"],
                "properties": {
                    "signal": {"enum": ["U_t", "phi"]},
                    "kind": {"enum": ["hold", "step", "ramp"]},
                    "start": {"type": "number", "minimum": 0},
                    "end": _positive,
                    "value": _number,
                    "from": _number,
                    "to": _number,
                },
                "additionalProperties": False,
            },
        },
        "noise_profile_ref": {"type": ["string", "null"]},
        "bad_data": _bad_data,
    },
    "additionalProperties": False,
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "required": ["name", "scenario_ref", "seeds"],
    "properties": {
        "name": _name,
        "scenario_ref": _name,
        "params_ref": _name,
        "profile_ref": _name,
        "filters": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"enum": ["ckf", "rckf"]}},
        "huber": {"type": "object", "properties": {"c": _positive}, "additionalProperties": False},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "out": _name,
        "timing": {"type": "boolean"},
        "workers": {"type": "integer", "minimum": 1},
        "model_noise": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0} for k in
                           ("sigma_Ut", "sigma_phi_deg", "sigma_delta_deg", "var_omega", "pe_var_floor")}
                          | {"fd_stencil": _positive},
            "additionalProperties": False,
        },
        "initial": {
            "type": "object",
            "properties": {
                "cov_diag": {"type": "array", "minItems": 4, "maxItems": 4, "items": _positive},
                "offset": {"type": "array", "minItems": 4, "maxItems": 4, "items": _number},
            },
            "additionalProperties": False,
        },
        "metrics": {
            "type": "object",
            "properties": {"warmup": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {"profiles": {"type": "array", "minItems": 1, "items": _name}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

SCHEMAS = {
    "machines": MACHINE_SCHEMA,
    "scenarios": SCENARIO_SCHEMA,
    "profiles": PROFILE_SCHEMA,
    "experiments": EXPERIMENT_SCHEMA,
}


def validate(kind: str, document: Any, source: str = "<config>") -> Dict[str, Any]:
    """Raise ConfigError with the most relevant schema violation, else return the document."""
    if kind not in SCHEMAS:
        raise ConfigError(f"Unknown config kind '{kind}'")
    error = best_match(Draft202012Validator(SCHEMAS[kind]).iter_errors(document))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {error.message}")
    return document
