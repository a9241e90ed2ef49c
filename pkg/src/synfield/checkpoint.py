"""Checkpoint persistence.

Single binary file: magic "SYNF", a little-endian u32 format version, then a
sequence of length-prefixed named arrays (u32 name length, utf-8 name, u32
ndim, u32 dims, raw little-endian float32 data).  Everything non-array
(iteration, config echo, optimizer step counts, layer wiring) rides along as
one JSON document stored byte-per-float in the reserved "meta" record, which
keeps integers like seeds exact and the container format uniform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .grid import PlaneSet
from .model import FieldModel
from .net import MlpParams
from .optim import AdamState, TrainConfig

MAGIC = b"SYNF"
VERSION = 1
META_NAME = "meta"


@dataclass
class Checkpoint:
    model: FieldModel
    adam: AdamState | None
    iteration: int
    config: TrainConfig


def _write_record(f, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f4")
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", data.ndim))
    for d in data.shape:
        f.write(struct.pack("<I", d))
    f.write(data.tobytes())


def save_checkpoint(path, model: FieldModel, adam: AdamState | None,
                    iteration: int, config: TrainConfig):
    meta = {
        "mode": model.mode,
        "iteration": int(iteration),
        "config": config.to_dict(),
        "model": {"use_coords": model.use_coords, "use_planes": model.use_planes},
        "mlp": {
            "variant": model.mlp.variant,
            "d_coord": model.mlp.d_coord,
            "d_plane": model.mlp.d_plane,
            "width": model.mlp.width,
            "use_viewdir": model.mlp.use_viewdir,
            "n_enc_layers": len(model.mlp.layers),
        },
        "adam": None if adam is None else {
            "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
            "steps": {k: int(v) for k, v in adam.steps.items()},
        },
    }
    meta_bytes = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_record(f, META_NAME, meta_bytes.astype(np.float32))
        for name, p in model.parameters().items():
            _write_record(f, name, p)
        if adam is not None:
            for name, m in adam.m.items():
                _write_record(f, f"adam.m.{name}", m)
            for name, v in adam.v.items():
                _write_record(f, f"adam.v.{name}", v)


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}",
                                    offset=f.tell() - len(data))
    return data


def _read_records(path) -> dict:
    records = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}", offset=0)
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}",
                                        offset=4)
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointFormatError("truncated record header",
                                            offset=f.tell() - len(head))
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "record name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, f"{name} ndim"))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4, f"{name} shape"))[0]
                          for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(f, 4 * count, f"{name} data")
            records[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return records


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint back into a live model + optimizer state."""
    if not Path(path).exists():
        raise CheckpointFormatError(f"no checkpoint at {path}")
    records = _read_records(path)
    if META_NAME not in records:
        raise CheckpointFormatError("checkpoint lacks the meta record")
    raw = records.pop(META_NAME)
    try:
        meta = json.loads(bytes(raw.astype(np.uint8)).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointFormatError(f"unreadable meta record: {e}") from e

    config = TrainConfig(**meta["config"])
    dtype = config.np_dtype()

    def take(name):
        if name not in records:
            raise CheckpointFormatError(f"checkpoint missing array {name!r}")
        return records[name].astype(dtype)

    planes = [take(f"plane{k}") for k in range(3)]
    factors = [take(f"factor{k}") for k in range(3)]
    ps = PlaneSet(meta["mode"], planes, factors)
    mi = meta["mlp"]
    layers = [(take(f"enc_w{k}"), take(f"enc_b{k}")) for k in range(mi["n_enc_layers"])]
    rgb_layers = [(take(f"rgb_w{k}"), take(f"rgb_b{k}")) for k in range(2)]
    mlp = MlpParams(mi["variant"], layers, rgb_layers, mi["d_coord"], mi["d_plane"],
                    mi["width"], mi["use_viewdir"])
    model = FieldModel(ps, mlp, use_coords=meta["model"]["use_coords"],
                       use_planes=meta["model"]["use_planes"])

    adam = None
    if meta["adam"] is not None:
        ai = meta["adam"]
        names = list(model.parameters())
        adam = AdamState(
            m={n: records[f"adam.m.{n}"].astype(dtype) for n in names},
            v={n: records[f"adam.v.{n}"].astype(dtype) for n in names},
            steps={n: int(ai["steps"][n]) for n in names},
            beta1=ai["beta1"], beta2=ai["beta2"], eps=ai["eps"])
    return Checkpoint(model=model, adam=adam, iteration=meta["iteration"],
                      config=config)
