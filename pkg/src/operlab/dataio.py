"""Portable persistence: a text header plus a checksummed float64 payload.

Layout: one ASCII line "operlab-binary <version> <header_bytes>\n", followed
by exactly header_bytes of JSON metadata, followed by the payload as raw
little-endian float64 values (row-major per array).  The header records the
payload length and its SHA-256, so loads are bitwise-verified.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .grids import FunctionSample, Grid1D, Grid2D, OperatorDataset
from .opfit import (
    BandedKernelModel,
    DenseKernelModel,
    FourierMultiplierModel,
    HierarchicalBlock,
    HierarchicalKernelModel,
    KernelModel,
    LowRankKernelModel,
)

MAGIC = "operlab-binary"
VERSION = 1


class DataFormatError(RuntimeError):
    """Base class for container format problems."""


class ChecksumMismatchError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class UnsupportedVersionError(DataFormatError):
    pass


def grid_to_dict(grid) -> dict:
    if isinstance(grid, Grid1D):
        kind = "periodic-1d" if grid.periodic else "uniform-1d"
        return {"kind": kind, "n": grid.n, "left": grid.left, "right": grid.right}
    if isinstance(grid, Grid2D):
        return {"kind": "uniform-2d", "n": grid.n, "left": grid.left, "right": grid.right}
    raise ValueError(f"unknown grid type {type(grid)!r}")


def grid_from_dict(d: dict):
    kind = d["kind"]
    if kind == "uniform-1d":
        return Grid1D(d["n"], d["left"], d["right"], periodic=False)
    if kind == "periodic-1d":
        return Grid1D(d["n"], d["left"], d["right"], periodic=True)
    if kind == "uniform-2d":
        return Grid2D(d["n"], d["left"], d["right"])
    raise DataFormatError(f"unknown grid kind {kind!r}")


def write_container(path, header: dict, payload: bytes):
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION} {len(header_bytes)}\n".encode())
        fh.write(header_bytes)
        fh.write(payload)


def read_container(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        first = fh.readline()
        parts = first.decode(errors="replace").split()
        if len(parts) != 3 or parts[0] != MAGIC:
            raise DataFormatError(f"{path}: not an operlab container")
        try:
            version, header_len = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise DataFormatError(f"{path}: malformed container line") from exc
        if version != VERSION:
            raise UnsupportedVersionError(
                f"{path}: container version {version} is not supported (expected {VERSION})"
            )
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise TruncatedPayloadError(f"{path}: header shorter than its declared length")
        try:
            header = json.loads(header_bytes)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: malformed header") from exc
        payload = fh.read()
    declared = header.get("payload_bytes")
    if declared is None or len(payload) != declared:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header declares {declared}"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise ChecksumMismatchError(f"{path}: payload checksum mismatch")
    return header, payload


def _pack_arrays(arrays: list[tuple[str, np.ndarray]]) -> tuple[list[dict], bytes]:
    manifest = []
    chunks = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    return manifest, b"".join(chunks)


def _unpack_arrays(manifest: list[dict], payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape)) if shape else 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise TruncatedPayloadError(f"array {entry['name']} is truncated")
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise TruncatedPayloadError("payload longer than the arrays it declares")
    return out


def save_dataset(path, ds: OperatorDataset):
    """Write a dataset: header with grid/provenance, payload inputs then outputs."""
    grid = ds.inputs[0].grid if ds.inputs else None
    arrays = [(f"input{i}", s.values) for i, s in enumerate(ds.inputs)]
    arrays += [(f"output{i}", s.values) for i, s in enumerate(ds.outputs)]
    manifest, payload = _pack_arrays(arrays)
    header = {
        "container": "dataset",
        "version": VERSION,
        "grid": grid_to_dict(grid) if grid is not None else None,
        "num_pairs": len(ds),
        "provenance": ds.provenance,
        "arrays": manifest,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    write_container(path, header, payload)


def load_dataset(path) -> OperatorDataset:
    header, payload = read_container(path)
    if header.get("container") != "dataset":
        raise DataFormatError(f"{path}: container holds {header.get('container')!r}, not a dataset")
    arrays = _unpack_arrays(header["arrays"], payload)
    grid = grid_from_dict(header["grid"]) if header["grid"] is not None else None
    count = header["num_pairs"]
    inputs = [FunctionSample(grid, arrays[f"input{i}"]) for i in range(count)]
    outputs = [FunctionSample(grid, arrays[f"output{i}"]) for i in range(count)]
    return OperatorDataset(inputs, outputs, header.get("provenance", {}))


def save_model(path, model: KernelModel):
    """Write a fitted kernel model in the same container format."""
    header: dict = {
        "container": "model",
        "version": VERSION,
        "variant": model.variant,
        "grid": grid_to_dict(model.grid),
    }
    arrays: list[tuple[str, np.ndarray]] = []
    if isinstance(model, DenseKernelModel):
        header["ridge"] = model.ridge
        arrays.append(("kernel", model.kernel))
    elif isinstance(model, LowRankKernelModel):
        arrays.append(("col_factor", model.col_factor))
        arrays.append(("row_factor", model.row_factor))
    elif isinstance(model, FourierMultiplierModel):
        header["max_mode"] = model.max_mode
        arrays.append(("multiplier_real", model.multiplier.real))
        arrays.append(("multiplier_imag", model.multiplier.imag))
        arrays.append(("excited", model.excited.astype(float)))
    elif isinstance(model, BandedKernelModel):
        header["radius"] = model.radius
        header["truncation_error"] = model.truncation_error
        arrays.append(("kernel", model.kernel))
    elif isinstance(model, HierarchicalKernelModel):
        header["levels"] = model.levels
        header["rank"] = model.rank
        header["block_meta"] = [
            {"level": b.level, "row": b.row_start, "col": b.col_start,
             "size": b.size, "tail": b.tail}
            for b in model.blocks
        ]
        header["leaf_meta"] = [
            {"row": r0, "col": c0, "size": block.shape[0]}
            for r0, c0, block in model.leaves
        ]
        for i, b in enumerate(model.blocks):
            arrays.append((f"block{i}_col", b.col_factor))
            arrays.append((f"block{i}_row", b.row_factor))
        for i, (_, _, block) in enumerate(model.leaves):
            arrays.append((f"leaf{i}", block))
    else:
        raise ValueError(f"cannot persist model variant {model.variant!r}")
    manifest, payload = _pack_arrays(arrays)
    header["arrays"] = manifest
    header["payload_bytes"] = len(payload)
    header["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    write_container(path, header, payload)


def load_model(path) -> KernelModel:
    header, payload = read_container(path)
    if header.get("container") != "model":
        raise DataFormatError(f"{path}: container holds {header.get('container')!r}, not a model")
    arrays = _unpack_arrays(header["arrays"], payload)
    grid = grid_from_dict(header["grid"])
    variant = header["variant"]
    if variant == "dense-kernel":
        return DenseKernelModel(grid, arrays["kernel"], header.get("ridge", 0.0))
    if variant == "low-rank":
        return LowRankKernelModel(grid, arrays["col_factor"], arrays["row_factor"])
    if variant == "fourier-multiplier":
        multiplier = arrays["multiplier_real"] + 1j * arrays["multiplier_imag"]
        return FourierMultiplierModel(
            grid, header["max_mode"], multiplier, arrays["excited"] > 0.5
        )
    if variant == "banded":
        return BandedKernelModel(
            grid, arrays["kernel"], header["radius"], header["truncation_error"]
        )
    if variant == "hierarchical":
        blocks = [
            HierarchicalBlock(
                meta["level"], meta["row"], meta["col"], meta["size"],
                arrays[f"block{i}_col"], arrays[f"block{i}_row"], meta["tail"],
            )
            for i, meta in enumerate(header["block_meta"])
        ]
        leaves = [
            (meta["row"], meta["col"], arrays[f"leaf{i}"])
            for i, meta in enumerate(header["leaf_meta"])
        ]
        return HierarchicalKernelModel(grid, header["levels"], header["rank"], blocks, leaves)
    raise DataFormatError(f"{path}: unknown model variant {variant!r}")
