"""Checkpoint persistence: JSON manifest plus one raw binary file per block.

Layout of a checkpoint directory::

    manifest.json            architecture spec, block table, spec_hash, decade
    blocks/<name>.bin        raw little-endian floats, C order

Weight blocks are 32-bit floats.  Offset deltas are 64-bit so that applying a
stored offset to its base reproduces the tuned weights bit-exactly; the
manifest records the dtype per block, keeping the format self-describing.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .specs import GeneratorSpec, ParameterVector, SpecMismatchError, TmtOffset

MANIFEST_NAME = "manifest.json"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode())


def _write_blocks(directory: Path, blocks: dict[str, np.ndarray], dtype: str) -> dict:
    table = {}
    for name, arr in blocks.items():
        rel = f"blocks/{name}.bin"
        atomic_write_bytes(directory / rel, np.ascontiguousarray(arr).astype(dtype).tobytes())
        table[name] = {"shape": list(arr.shape), "dtype": dtype, "file": rel}
    return table


def _read_blocks(directory: Path, table: dict) -> dict[str, np.ndarray]:
    blocks = {}
    for name, meta in table.items():
        raw = (directory / meta["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"]))
        blocks[name] = arr.reshape(tuple(meta["shape"])).copy()
    return blocks


def save_params(directory: Path, pv: ParameterVector, spec: GeneratorSpec,
                decade: int | None = None) -> None:
    directory = Path(directory)
    pv.check_spec(spec)
    table = _write_blocks(directory, dict(pv.blocks), "<f4")
    atomic_write_json(directory / MANIFEST_NAME, {
        "kind": "params",
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash(),
        "decade": decade,
        "blocks": table,
    })


def load_params(directory: Path,
                expected_spec: GeneratorSpec | None = None
                ) -> tuple[ParameterVector, GeneratorSpec, int | None]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("kind") != "params":
        raise ValueError(f"{directory} is not a parameter checkpoint")
    spec = GeneratorSpec.from_dict(manifest["spec"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise SpecMismatchError("manifest spec_hash does not match its spec")
    if expected_spec is not None and expected_spec.spec_hash() != spec.spec_hash():
        raise SpecMismatchError(
            f"checkpoint spec {spec.spec_hash()} != expected {expected_spec.spec_hash()}")
    blocks = _read_blocks(directory, manifest["blocks"])
    pv = ParameterVector.from_blocks(blocks, spec)
    return pv, spec, manifest.get("decade")


def save_offset(directory: Path, offset: TmtOffset, spec: GeneratorSpec) -> None:
    directory = Path(directory)
    offset.check_spec(spec)
    table = _write_blocks(directory, dict(offset.deltas), "<f8")
    atomic_write_json(directory / MANIFEST_NAME, {
        "kind": "offset",
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash(),
        "base_decade": offset.base_decade,
        "blocks": table,
    })


def load_offset(directory: Path,
                expected_spec: GeneratorSpec | None = None
                ) -> tuple[TmtOffset, GeneratorSpec]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("kind") != "offset":
        raise ValueError(f"{directory} is not an offset checkpoint")
    spec = GeneratorSpec.from_dict(manifest["spec"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise SpecMismatchError("manifest spec_hash does not match its spec")
    if expected_spec is not None and expected_spec.spec_hash() != spec.spec_hash():
        raise SpecMismatchError(
            f"offset spec {spec.spec_hash()} != expected {expected_spec.spec_hash()}")
    deltas = _read_blocks(directory, manifest["blocks"])
    offset = TmtOffset.from_deltas(deltas, manifest["base_decade"], spec)
    return offset, spec
