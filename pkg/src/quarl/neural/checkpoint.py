"""Versioned checkpoints for trained Q networks.

Layout: the magic bytes ``QRLCKPT\\0``, a little-endian ``uint32`` header
length, a UTF-8 JSON header, then each parameter array as little-endian
float64 in the order listed by the header.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ShapeError
from ..hamiltonian import model_from_dict
from .network import QNetwork

MAGIC = b"QRLCKPT\0"
VERSION = 1


def save_checkpoint(path, net: QNetwork, model=None, formulation=None, extra: dict | None = None) -> None:
    names = sorted(net.params)
    header = {
        "version": VERSION,
        "lattice": net.lattice.to_dict(),
        "network": {
            "channels": net.channels,
            "hidden_layers": net.hidden_layers,
            "kernel_size": net.kernel_size,
        },
        "model": model.to_dict() if model is not None else None,
        "formulation": formulation.to_dict() if formulation is not None else None,
        "params": [{"name": k, "shape": list(net.params[k].shape)} for k in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a checkpoint file")
    (size,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(size).decode())
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    return header


def load_checkpoint(path):
    """Returns ``(net, header)``; ``header["model"]`` can be rebuilt with :func:`model_from_dict`."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        lat = header["lattice"]
        from ..lattice import build_lattice

        lattice = build_lattice(tuple(lat["dims"]), tuple(lat["periodic"]))
        net = QNetwork(lattice, seed=0, **header["network"])
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ShapeError(f"truncated checkpoint at parameter {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise ShapeError("trailing bytes after the last parameter")
    net.load_params(params)
    return net, header


def load_model(header: dict):
    return model_from_dict(header["model"]) if header.get("model") else None


LOG_COLUMNS = ("episode", "loss", "E_var", "E0_est", "lr")


def write_training_log(path, rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOG_COLUMNS})
