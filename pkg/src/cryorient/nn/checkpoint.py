"""Model checkpoints: ``b"OFM1"``, a uint64 header length, a JSON header, float64 blocks."""
import json
import struct

import numpy as np

from ..errors import InvalidArgument
from .model import EncoderConfig, Model
from .tensor import parameter

MAGIC = b"OFM1"
FORMAT_VERSION = 1


def save_model(model, path, extra=None):
    blocks = [(name, p.value) for name, p in model.params.items()]
    for layer, st in model.state.items():
        blocks += [(f"{layer}.running_{k}", v) for k, v in st.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "blocks": [{"name": n, "shape": list(np.shape(v))} for n, v in blocks],
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for _, v in blocks:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_model(path):
    """Return ``(model, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise InvalidArgument(f"{path}: not a model checkpoint")
    (n,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    cfg = EncoderConfig.from_dict(header["config"])
    dt = np.dtype(cfg.dtype)
    offset = 12 + n
    params, state = {}, {}
    for b in header["blocks"]:
        size = int(np.prod(b["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(b["shape"]).astype(dt)
        offset += 8 * size
        name = b["name"]
        if ".running_" in name:
            layer, key = name.split(".running_")
            state.setdefault(layer, {})[key] = arr
        else:
            params[name] = parameter(arr)
    if offset != len(raw):
        raise InvalidArgument(f"{path}: {len(raw) - offset} trailing bytes")
    return Model(cfg, params, state, header.get("seed", 0)), header
