"""Experiment configs: a single INI document of key-value tables.

The serialized form is canonical (fixed section and key order, round-trip
float formatting), so text -> config -> text is the identity on canonical
documents and every run can write its resolved config beside its outputs.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field as dc_field
from typing import Any

from homoglab.errors import ConfigError

KINDS = ("gen-field", "effmat", "sweep", "corrector", "gff-compare",
         "error-scaling", "regularity")

# key -> (type tag, required, default); list tags hold the element type
_PARAM_SCHEMA: dict[str, dict[str, tuple[str, bool, Any]]] = {
    "gen-field": {
        "r": ("int", True, None),
        "m": ("int", False, 4),
        "dump_tensors": ("bool", False, True),
    },
    "effmat": {
        "r": ("int", True, None),
        "m": ("int", False, 4),
        "n_samples": ("int", True, None),
        "dual": ("bool", False, True),
    },
    "sweep": {
        "scales": ("int_list", True, None),
        "m": ("int", False, 2),
        "n_samples": ("int", True, None),
    },
    "corrector": {
        "box": ("int", True, None),
        "m": ("int", False, 2),
        "n_samples": ("int", True, None),
        "kernel_scales": ("float_list", True, None),
        "kernel": ("str", False, "bump"),
        "radii": ("float_list", False, ()),
    },
    "gff-compare": {
        "box": ("int", True, None),
        "m": ("int", False, 2),
        "n_samples": ("int", True, None),
        "kernel_scales": ("float_list", True, None),
        "kernel": ("str", False, "bump"),
        "abar": ("float_list", True, None),
        "noise_scale": ("float", False, 1.0),
    },
    "error-scaling": {
        "f": ("str", True, None),
        "inv_eps": ("int_list", True, None),
        "n_samples": ("int", True, None),
        "m": ("int", False, 2),
        "abar": ("float_list", False, ()),
        "two_scale": ("bool", False, True),
        "oracle_m": ("int", False, 16),
    },
    "regularity": {
        "rs": ("int_list", True, None),
        "ndraws": ("int", True, None),
        "m": ("int", False, 2),
    },
}

_EXPERIMENT_KEYS = ("kind", "d", "seed", "label", "outdir")


@dataclass
class ExperimentConfig:
    kind: str
    d: int
    seed: int
    field_kind: str
    field_params: dict[str, float] = dc_field(default_factory=dict)
    params: dict[str, Any] = dc_field(default_factory=dict)
    tolerances: dict[str, float] = dc_field(default_factory=dict)
    label: str | None = None
    outdir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind: unknown kind {self.kind!r}")
        if self.d < 1:
            raise ConfigError("experiment.d: must be a positive integer")
        schema = _PARAM_SCHEMA[self.kind]
        for key in self.params:
            if key not in schema:
                raise ConfigError(f"params.{key}: not a parameter of {self.kind!r}")
        for key, (tag, required, default) in schema.items():
            if key not in self.params:
                if required:
                    raise ConfigError(f"params.{key}: required for {self.kind!r}")
                self.params[key] = list(default) if isinstance(default, tuple) else default
        for key in self.tolerances:
            if key != "tol_lin":
                raise ConfigError(f"tolerances.{key}: unknown tolerance")
            if self.tolerances[key] <= 0:
                raise ConfigError("tolerances.tol_lin: must be positive")

    @property
    def tol_lin(self) -> float:
        return float(self.tolerances.get("tol_lin", 1e-10))

    @property
    def bundle_name(self) -> str:
        return self.label or f"{self.kind}-seed{self.seed}"


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _parse_scalar(tag: str, raw: str, where: str) -> Any:
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tag == "str":
            return raw
        if tag.endswith("_list"):
            sub = tag[:-5]
            items = [p for p in (s.strip() for s in raw.split(",")) if p]
            return [_parse_scalar(sub, p, where) for p in items]
    except (ValueError, TypeError):
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tag}") from None
    raise ConfigError(f"{where}: unknown type tag {tag}")


def loads(text: str) -> ExperimentConfig:
    """Parse a config document; errors name section.key."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    if "experiment" not in cp:
        raise ConfigError("experiment: section missing")
    exp = cp["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"experiment.{key}: unknown key")
    for key in ("kind", "d", "seed"):
        if key not in exp:
            raise ConfigError(f"experiment.{key}: required")
    kind = exp["kind"].strip()
    if kind not in _PARAM_SCHEMA:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    if "field" not in cp or "kind" not in cp["field"]:
        raise ConfigError("field.kind: required")
    fsec = cp["field"]
    fparams = {k: _parse_scalar("float", v, f"field.{k}")
               for k, v in fsec.items() if k != "kind"}
    schema = _PARAM_SCHEMA[kind]
    params: dict[str, Any] = {}
    if "params" in cp:
        for key, raw in cp["params"].items():
            if key not in schema:
                raise ConfigError(f"params.{key}: not a parameter of {kind!r}")
            params[key] = _parse_scalar(schema[key][0], raw, f"params.{key}")
    tols = {}
    if "tolerances" in cp:
        tols = {k: _parse_scalar("float", v, f"tolerances.{k}")
                for k, v in cp["tolerances"].items()}
    known = {"experiment", "field", "params", "tolerances"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{sec}: unknown section")
    return ExperimentConfig(
        kind=kind,
        d=_parse_scalar("int", exp["d"], "experiment.d"),
        seed=_parse_scalar("int", exp["seed"], "experiment.seed"),
        field_kind=fsec["kind"].strip(),
        field_params=fparams,
        params=params,
        tolerances=tols,
        label=exp.get("label", None),
        outdir=exp.get("outdir", None),
    )


def dumps(config: ExperimentConfig) -> str:
    """Canonical text form; loads(dumps(c)) == c and dumps(loads(t)) == t
    for canonical t."""
    out = io.StringIO()
    out.write("[experiment]\n")
    out.write(f"kind = {config.kind}\n")
    out.write(f"d = {config.d}\n")
    out.write(f"seed = {config.seed}\n")
    if config.label is not None:
        out.write(f"label = {config.label}\n")
    if config.outdir is not None:
        out.write(f"outdir = {config.outdir}\n")
    out.write("\n[field]\n")
    out.write(f"kind = {config.field_kind}\n")
    for key in sorted(config.field_params):
        out.write(f"{key} = {_fmt(config.field_params[key])}\n")
    out.write("\n[params]\n")
    for key in _PARAM_SCHEMA[config.kind]:
        if key in config.params and config.params[key] is not None:
            val = config.params[key]
            if isinstance(val, list) and not val:
                continue
            out.write(f"{key} = {_fmt(val)}\n")
    if config.tolerances:
        out.write("\n[tolerances]\n")
        for key in sorted(config.tolerances):
            out.write(f"{key} = {_fmt(config.tolerances[key])}\n")
    return out.getvalue()


def load_file(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dump_file(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(config))
