"""Weights bundle: a directory of array files plus a JSON manifest."""

from __future__ import annotations

import json
import os

import numpy as np

from .cfl import read_array, write_array

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class BundleError(ValueError):
    """Missing, malformed or incompatible weights bundle."""


def save_bundle(path, network: str, config: dict, seed: int, arrays: dict, kinds: dict) -> None:
    os.makedirs(path, exist_ok=True)
    entries = {}
    for k, name in enumerate(sorted(arrays)):
        fname = f"a{k:04d}"
        a = np.asarray(arrays[name])
        write_array(os.path.join(path, fname), a)
        entries[name] = {"file": fname, "kind": kinds[name], "shape": list(a.shape)}
    manifest = {"format_version": FORMAT_VERSION, "network": network, "config": config, "seed": int(seed),
                "arrays": entries}
    with open(os.path.join(path, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_bundle(path) -> tuple[dict, dict]:
    """Returns ``(manifest, arrays)``."""
    mpath = os.path.join(path, MANIFEST)
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise BundleError(f"{path}: not a weights bundle (no {MANIFEST})") from None
    except json.JSONDecodeError as e:
        raise BundleError(f"{mpath}: {e}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"{mpath}: unsupported format version {manifest.get('format_version')}")
    arrays = {}
    for name, e in manifest["arrays"].items():
        a = read_array(os.path.join(path, e["file"]))
        arrays[name] = np.reshape(a, tuple(e["shape"]), order="F")
    return manifest, arrays
