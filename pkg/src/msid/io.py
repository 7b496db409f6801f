"""JSON reading and writing against the schemas shipped with the package."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

__all__ = ["InputError", "load_schema", "validate", "read_json", "write_json", "config_path"]


class InputError(Exception):
    """Unreadable or malformed input file (CLI exit code 2)."""


@lru_cache(maxsize=None)
def _registry() -> Registry:
    pairs = []
    for f in resources.files("msid.schemas").iterdir():
        if f.name.endswith(".schema.json"):
            doc = json.loads(f.read_text())
            pairs.append((f.name, Resource.from_contents(doc)))
    return Registry().with_resources(pairs)


def load_schema(name: str) -> dict:
    return _registry()[f"{name}.schema.json"].contents


def validate(doc, name: str, source: str = "<document>") -> None:
    v = jsonschema.Draft202012Validator(load_schema(name), registry=_registry())
    err = jsonschema.exceptions.best_match(v.iter_errors(doc))
    if err is not None:
        raise InputError(f"{source}: {err.json_path}: {err.message}")


def read_json(path, schema: str | None = None):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if schema is not None:
        validate(doc, schema, str(path))
    return doc


def write_json(path, doc, schema: str | None = None) -> None:
    if schema is not None:
        validate(doc, schema, str(path))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def config_path(name: str) -> Path:
    """Path of a default scenario config shipped with the package."""
    return Path(str(resources.files("msid.configs").joinpath(f"{name}.json")))
