"""Bundle reading, strictly against the documented file formats.

A bundle is a directory with config.ini, schema-tagged CSV tables,
summary.json, meta.json, and optional .npy dumps. Every reader here
verifies the schema marker and reports the offending file by path.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from homogfig.errors import BundleFormatError

SCHEMA = 1


def read_csv(path: Path) -> list[dict[str, str]]:
    """Rows as string dicts; the first line must be `#schema=1`."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise BundleFormatError(f"{path}: cannot read ({exc})") from None
    if not lines or not lines[0].startswith("#schema="):
        raise BundleFormatError(f"{path}: missing #schema header line, "
                                f"expected schema {SCHEMA}")
    version = lines[0][len("#schema="):]
    if version != str(SCHEMA):
        raise BundleFormatError(f"{path}: written with schema {version}, "
                                f"this reader reads schema {SCHEMA}")
    names = lines[1].split(",")
    return [dict(zip(names, line.split(","))) for line in lines[2:] if line]


@dataclass
class Bundle:
    directory: Path
    kind: str
    d: int
    label: str
    field_kind: str
    summary: dict
    tables: dict[str, list[dict[str, str]]] = field(default_factory=dict)

    def npy(self, name: str) -> np.ndarray:
        path = self.directory / f"{name}.npy"
        if not path.exists():
            raise BundleFormatError(f"{path}: dump not present in bundle")
        return np.load(path)

    def has_npy(self, name: str) -> bool:
        return (self.directory / f"{name}.npy").exists()


def load_bundle(directory) -> Bundle:
    directory = Path(directory)
    cfg_path = directory / "config.ini"
    if not cfg_path.exists():
        raise BundleFormatError(f"{directory}: not a result bundle "
                                f"(no config.ini)")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(cfg_path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise BundleFormatError(f"{cfg_path}: cannot parse ({exc})") from None
    if "experiment" not in cp or "kind" not in cp["experiment"]:
        raise BundleFormatError(f"{cfg_path}: missing experiment.kind")
    exp = cp["experiment"]

    summary_path = directory / "summary.json"
    if not summary_path.exists():
        raise BundleFormatError(f"{summary_path}: missing")
    try:
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{summary_path}: invalid JSON ({exc})") from None
    if summary.get("schema") != SCHEMA:
        raise BundleFormatError(
            f"{summary_path}: written with schema {summary.get('schema')!r}, "
            f"this reader reads schema {SCHEMA}")

    tables = {p.stem: read_csv(p) for p in sorted(directory.glob("*.csv"))}
    field_kind = ""
    if "field" in cp and "kind" in cp["field"]:
        field_kind = cp["field"]["kind"].strip()
    return Bundle(
        directory=directory,
        kind=exp["kind"].strip(),
        d=int(exp.get("d", "0")),
        label=exp.get("label", directory.name).strip(),
        field_kind=field_kind,
        summary=summary,
        tables=tables,
    )
