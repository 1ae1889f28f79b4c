"""Checkpoint files: a JSON header followed by raw float32 parameters.

Layout (little-endian)::

    0   4s  magic b"MFCK"
    4   u16 version (1)
    6   u16 reserved (0)
    8   u32 header length in bytes
    12  u32 CRC-32 of header + payload
    16  header (UTF-8 JSON, sorted keys)
    ..  payload: parameters in header order, float32 row-major
"""

import json
import struct
import zlib

import numpy as np

from . import tensor as T
from .exceptions import FormatError
from .flow import CouplingBlock, FlowModel
from .multiview import StNetwork, ViewTopology
from .training import Checkpoint, TrainConfig

__all__ = ["MAGIC", "VERSION", "encode_checkpoint", "decode_checkpoint",
           "save_checkpoint", "load_checkpoint"]

MAGIC = b"MFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHHII")
_ST_FIELDS = ("conv_weight", "conv_bias", "cross_weight", "cross_bias")


def encode_checkpoint(ckpt):
    model = ckpt.model
    params, payload, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        params.append({"name": name, "shape": list(p.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_dict(),
        "topology": model.topology.to_dict(),
        "input_shape": list(model.input_shape),
        "noise_channels": model.noise_channels,
        "hidden_dim": model.hidden_dim,
        "cross_kernel": model.cross_kernel,
        "blocks": [{"permutation": [int(i) for i in b.permutation],
                    "clamp_alpha": b.clamp_alpha,
                    "last_block": b.last_block} for b in model.blocks],
        "params": params,
        "loss_history": list(ckpt.loss_history),
        "scale_history": list(ckpt.scale_history),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = hbytes + b"".join(payload)
    return _PREFIX.pack(MAGIC, VERSION, 0, len(hbytes), zlib.crc32(body)) + body


def decode_checkpoint(buf):
    buf = bytes(buf)
    if len(buf) < _PREFIX.size:
        raise FormatError("checkpoint too short", offset=len(buf))
    magic, version, _, hlen, crc = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    body = buf[_PREFIX.size:]
    if len(body) < hlen:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch", offset=12)
    try:
        header = json.loads(body[:hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupted checkpoint header: {exc}", offset=_PREFIX.size) from None
    payload = body[hlen:]

    try:
        topology = ViewTopology.from_dict(header["topology"])
        config = TrainConfig.from_dict(header["config"])
        arrays = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            start = entry["offset"]
            if start + 4 * count > len(payload):
                raise FormatError(f"parameter {entry['name']} exceeds payload",
                                  offset=_PREFIX.size + hlen + start)
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
            arrays[entry["name"]] = arr.reshape(shape).astype(np.float32)
        blocks = []
        for b, entry in enumerate(header["blocks"]):
            sts = [StNetwork(*(T.Tensor(arrays[f"blocks.{b}.{tag}.{f}"], requires_grad=True)
                               for f in _ST_FIELDS))
                   for tag in ("st1", "st2")]
            blocks.append(CouplingBlock(np.asarray(entry["permutation"], dtype=np.intp),
                                        sts[0], sts[1], topology,
                                        entry["clamp_alpha"], entry["last_block"]))
        model = FlowModel(blocks, tuple(header["input_shape"]), header["noise_channels"],
                          topology, header["hidden_dim"], header["cross_kernel"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}", offset=_PREFIX.size) from None
    return Checkpoint(model, config, list(header["loss_history"]),
                      list(header["scale_history"]))


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
