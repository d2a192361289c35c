"""Strict JSON scenario files for Lindblad models and Kraus maps.

Complex matrices are nested row lists of [re, im] pairs. Unknown keys are
rejected everywhere.
"""
from dataclasses import dataclass, field
from importlib import resources
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ParseError, SchemaVersionMismatch, UnresolvedReference
from .kraus import KrausMap
from .model import Channel, JumpSpec, LindbladModel, Protocol

SCHEMA_VERSION = "1.0"

_MATRIX = {
    "type": "array", "minItems": 1,
    "items": {"type": "array", "minItems": 1,
              "items": {"type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "number"}}},
}

_TOLERANCE_KEYS = {
    "privileged": 1e-9,
    "detailed_balance": 1e-9,
    "time_reversal": 1e-9,
    "modular": 1e-9,
    "log_identity": 1e-10,
    "weight_extraction": 1e-8,
    "equivalence": 1e-9,
    "positivity": 1e-9,
    "ft_sigma": 3.0,
    "monotonicity": 1e-10,
    "operator_classical": 1e-9,
    "mu_normalization": 1e-9,
    "stochasticity": 1e-9,
    "trace_preservation": 1e-10,
    "fixed_point": 1e-10,
}
DEFAULT_TOLERANCES = dict(_TOLERANCE_KEYS)

_RUN_PROPS = {
    "t0": {"type": "number"},
    "tau": {"type": "number", "exclusiveMinimum": 0},
    "dt": {"type": "number", "exclusiveMinimum": 0},
    "n_traj": {"type": "integer", "minimum": 1},
    "base_seed": {"type": "integer", "minimum": 0},
    "checkpoint_stride": {"type": "integer", "minimum": 1},
    "refresh_interval": {"type": "number", "exclusiveMinimum": 0},
    "rate_stride": {"type": "integer", "minimum": 1},
    "n_resamples": {"type": "integer", "minimum": 200},
}

_COMMON = {
    "schema_version": {"type": "string"},
    "kind": {"enum": ["lindblad", "kraus"]},
    "name": {"type": "string"},
    "description": {"type": "string"},
    "dim": {"type": "integer", "minimum": 1, "maximum": 16},
    "tolerances": {
        "type": "object", "additionalProperties": False,
        "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in _TOLERANCE_KEYS},
    },
}

LINDBLAD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "dim", "hamiltonian", "jumps", "horizon"],
    "properties": {
        **_COMMON,
        "hamiltonian": {
            "type": "object", "additionalProperties": False, "required": ["base"],
            "properties": {
                "base": _MATRIX,
                "terms": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["channel", "matrix"],
                    "properties": {"channel": {"type": "string"}, "matrix": _MATRIX}}},
            },
        },
        "jumps": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["matrix", "pair", "entropy_flow"],
            "properties": {
                "name": {"type": "string"},
                "matrix": _MATRIX,
                "amplitude": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "string"}]},
                "rate": {"type": "number", "minimum": 0},
                "pair": {"type": "integer"},
                "entropy_flow": {"type": "number"},
            },
            "not": {"required": ["amplitude", "rate"]},
        }},
        "channels": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": False, "required": ["times", "values"],
            "properties": {"times": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                           "values": {"type": "array", "minItems": 1, "items": {"type": "number"}}},
        }},
        "horizon": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        "initial_state": _MATRIX,
        "run": {"type": "object", "additionalProperties": False, "properties": _RUN_PROPS},
        "flags": {
            "type": "object", "additionalProperties": False,
            "properties": {"time_reversal_check": {"type": "boolean"},
                           "epsilon_mixing": {"type": "number", "minimum": 0, "maximum": 1},
                           "event_log": {"type": "boolean"}},
        },
    },
}

KRAUS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind"],
    "properties": {
        **_COMMON,
        "kraus": {"type": "array", "minItems": 1, "items": _MATRIX},
        "states": {"type": "array", "items": _MATRIX},
        "generated": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["d", "seed"],
            "properties": {"d": {"type": "integer", "minimum": 2, "maximum": 8},
                           "seed": {"type": "integer", "minimum": 0}}}},
        "audit": {"type": "object", "additionalProperties": False,
                  "properties": {"n_random": {"type": "integer", "minimum": 0},
                                 "seed": {"type": "integer", "minimum": 0}}},
    },
}


@dataclass
class Scenario:
    """Validated scenario. Exactly one of ``model`` / ``kraus`` is set for
    explicit files; Kraus files may instead list only generated fixtures."""
    kind: str
    name: str
    dim: int | None
    model: LindbladModel | None = None
    initial_state: np.ndarray | None = None
    run: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    flags: dict = field(default_factory=dict)
    kraus: KrausMap | None = None
    kraus_states: list = field(default_factory=list)
    generated: list = field(default_factory=list)
    audit: dict = field(default_factory=dict)
    source: str = ""


def parse_matrix(data, where: str, dim: int | None = None) -> np.ndarray:
    """[[ [re, im], ... ], ...] -> complex ndarray."""
    try:
        arr = np.asarray(data, dtype=float)
    except ValueError as exc:
        raise ParseError(f"{where}: ragged matrix") from exc
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ParseError(f"{where}: expected a square matrix of [re, im] pairs")
    if dim is not None and arr.shape[0] != dim:
        raise ParseError(f"{where}: matrix is {arr.shape[0]}x{arr.shape[0]}, dim is {dim}")
    return arr[..., 0] + 1j * arr[..., 1]


def matrix_to_json(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _field_path(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def _load_json(text: str, source: str):
    if not text.strip():
        raise ParseError(f"{source}: empty scenario file")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _validate(doc, schema, source: str) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(x) for x in e.absolute_path])
    if errors:
        e = errors[0]
        raise ParseError(f"{source}: field {_field_path(e)}: {e.message}")


def _tolerances(doc) -> dict:
    tols = dict(DEFAULT_TOLERANCES)
    tols.update(doc.get("tolerances", {}))
    return tols


def _build_lindblad(doc, source: str) -> Scenario:
    d = doc["dim"]
    channels = {}
    for name, ch in doc.get("channels", {}).items():
        if len(ch["times"]) != len(ch["values"]):
            raise ParseError(f"{source}: field channels/{name}: times and values differ in length")
        try:
            channels[name] = Channel(tuple(float(x) for x in ch["times"]),
                                     tuple(float(x) for x in ch["values"]))
        except ValueError as exc:
            raise ParseError(f"{source}: field channels/{name}: {exc}") from exc
    horizon = tuple(float(x) for x in doc["horizon"])
    if not horizon[1] > horizon[0]:
        raise ParseError(f"{source}: field horizon: end must exceed start")
    protocol = Protocol(channels, horizon)

    ham = doc["hamiltonian"]
    h_base = parse_matrix(ham["base"], "hamiltonian/base", d)
    terms = []
    for i, term in enumerate(ham.get("terms", [])):
        if term["channel"] not in channels:
            raise UnresolvedReference(
                f"{source}: field hamiltonian/terms/{i}/channel: unknown channel {term['channel']!r}")
        terms.append((term["channel"],
                      parse_matrix(term["matrix"], f"hamiltonian/terms/{i}/matrix", d)))

    n = len(doc["jumps"])
    jumps = []
    for k, j in enumerate(doc["jumps"]):
        where = f"jumps/{k}"
        base = parse_matrix(j["matrix"], f"{where}/matrix", d)
        if "rate" in j:
            amp = math.sqrt(j["rate"])
        else:
            amp = j.get("amplitude", 1.0)
            if isinstance(amp, str) and amp not in channels:
                raise UnresolvedReference(f"{source}: field {where}/amplitude: unknown channel {amp!r}")
        if not 0 <= j["pair"] < n:
            raise UnresolvedReference(f"{source}: field {where}/pair: no jump with index {j['pair']}")
        if doc["jumps"][j["pair"]]["pair"] != k:
            raise ParseError(f"{source}: field {where}/pair: pairing must be mutual")
        amp = amp if isinstance(amp, str) else float(amp)
        jumps.append(JumpSpec(base, amp, j["pair"], float(j["entropy_flow"]), j.get("name", str(k))))

    try:
        model = LindbladModel(d, h_base, tuple(terms), tuple(jumps), protocol,
                              name=doc.get("name", ""))
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from exc

    rho0 = None
    if "initial_state" in doc:
        rho0 = parse_matrix(doc["initial_state"], "initial_state", d)
    run = {"t0": horizon[0], "tau": horizon[1] - horizon[0], "dt": 1e-3, "n_traj": 1000,
           "base_seed": 0, "checkpoint_stride": None, "refresh_interval": None,
           "rate_stride": 10, "n_resamples": 200}
    run.update(doc.get("run", {}))
    if run["t0"] < horizon[0] or run["t0"] + run["tau"] > horizon[1] * (1 + 1e-12) + 1e-12:
        raise ParseError(f"{source}: field run: [t0, t0 + tau] leaves the horizon {list(horizon)}")
    flags = {"time_reversal_check": True, "epsilon_mixing": 0.0, "event_log": False}
    flags.update(doc.get("flags", {}))
    return Scenario("lindblad", doc.get("name", ""), d, model=model, initial_state=rho0,
                    run=run, tolerances=_tolerances(doc), flags=flags, source=source)


def _build_kraus(doc, source: str) -> Scenario:
    d = doc.get("dim")
    kmap = None
    if "kraus" in doc:
        mats = [parse_matrix(m, f"kraus/{i}", d) for i, m in enumerate(doc["kraus"])]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise ParseError(f"{source}: field kraus: operators differ in dimension")
        d = mats[0].shape[0]
        kmap = KrausMap.from_list(mats, check_tp=False)
    elif "generated" not in doc:
        raise ParseError(f"{source}: a Kraus scenario needs 'kraus' or 'generated'")
    states = []
    for i, s in enumerate(doc.get("states", [])):
        if kmap is None:
            raise ParseError(f"{source}: field states: states need an explicit 'kraus' list")
        states.append(parse_matrix(s, f"states/{i}", d))
    audit = {"n_random": 5, "seed": 0}
    audit.update(doc.get("audit", {}))
    return Scenario("kraus", doc.get("name", ""), d, tolerances=_tolerances(doc), kraus=kmap,
                    kraus_states=states, generated=list(doc.get("generated", [])),
                    audit=audit, source=source)


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    doc = _load_json(text, source)
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    version = doc.get("schema_version")
    if version is None:
        raise ParseError(f"{source}: field schema_version: missing")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{source}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION!r})")
    kind = doc.get("kind")
    if kind == "kraus":
        _validate(doc, KRAUS_SCHEMA, source)
        return _build_kraus(doc, source)
    _validate(doc, LINDBLAD_SCHEMA, source)
    return _build_lindblad(doc, source)


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    :raises ParseError: malformed JSON (with line) or schema violation (with field).
    :raises SchemaVersionMismatch: unsupported ``schema_version``.
    :raises UnresolvedReference: unknown channel or pair index.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    return parse_scenario_text(text, str(path))


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package, e.g. 'qubit.json'."""
    return Path(str(resources.files("nonadiabat") / "scenarios" / name))


__all__ = [
    "SCHEMA_VERSION", "DEFAULT_TOLERANCES", "LINDBLAD_SCHEMA", "KRAUS_SCHEMA", "Scenario",
    "parse_matrix", "matrix_to_json", "parse_scenario", "parse_scenario_text",
    "bundled_scenario",
]
