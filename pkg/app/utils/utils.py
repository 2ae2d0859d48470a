import copy
import hashlib
import os
from typing import Any, Dict, Iterable, List, Tuple

import pandas as pd
import yaml

FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: str):
    """
    Writes a DataFrame the way every artifact of a run is written.

    Floats carry 17 significant digits so that a reload with
    ``float_precision="round_trip"`` gives back the exact same values.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def parse_overrides(args: Iterable[str]) -> List[Tuple[str, Any]]:
    """
    Turns leftover CLI tokens into (dotted.key, value) pairs.

    Accepts ``--huber.c 1.8`` and ``--huber.c=1.8``; values are parsed as
    YAML scalars so numbers and booleans keep their type.
    """
    tokens = list(args)
    pairs = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ValueError(f"Unexpected argument '{token}', overrides look like --section.key value")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ValueError(f"Override '{token}' has no value")
            raw = tokens[i + 1]
            i += 2
        pairs.append((key, yaml.safe_load(raw)))
    return pairs


def apply_overrides(config: Dict[str, Any], overrides: Iterable[Tuple[str, Any]]) -> Dict[str, Any]:
    """Returns a copy of ``config`` with each dotted key set to its value."""
    result = copy.deepcopy(config)
    for key, value in overrides:
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ValueError(f"Cannot override '{key}': '{part}' is not a section")
            node = child
        node[parts[-1]] = value
    return result
