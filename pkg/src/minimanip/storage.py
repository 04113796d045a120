"""Binary checkpoint container shared by every trained model.

Layout: magic MMCKP1, u32 version, u32 meta length + UTF-8 JSON metadata,
u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
u32 dims, little-endian float32 data. Metadata carries the model kind,
constructor arguments, seed, and config hash for provenance.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

CKPT_MAGIC = b"MMCKP1\x00\x00"
VERSION = 1


def config_hash(obj):
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, state, meta):
    """Write named float tensors and a metadata dict."""
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(np.asarray([VERSION, len(meta_blob)], dtype="<u4").tobytes())
        f.write(meta_blob)
        f.write(np.asarray([len(state)], dtype="<u4").tobytes())
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            nb = name.encode()
            f.write(np.asarray([len(nb)], dtype="<u4").tobytes())
            f.write(nb)
            f.write(np.asarray([arr.ndim] + list(arr.shape), dtype="<u4").tobytes())
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read (state dict, metadata dict)."""
    with open(path, "rb") as f:
        if f.read(8) != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version, meta_len = np.frombuffer(f.read(8), dtype="<u4")
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(f.read(int(meta_len)).decode())
        (count,) = np.frombuffer(f.read(4), dtype="<u4")
        state = {}
        for _ in range(int(count)):
            (nlen,) = np.frombuffer(f.read(4), dtype="<u4")
            name = f.read(int(nlen)).decode()
            (ndim,) = np.frombuffer(f.read(4), dtype="<u4")
            shape = tuple(int(v) for v in np.frombuffer(f.read(4 * int(ndim)), dtype="<u4"))
            n = int(np.prod(shape)) if shape else 1
            state[name] = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
    return state, meta


def save_model(path, model, kind, init_kwargs, extra_meta=None):
    meta = {"kind": kind, "init": init_kwargs}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.state(), meta)


def load_model(path):
    """Rebuild a saved model; returns (model, metadata)."""
    from . import diffusion, inverse_dynamics, policies

    state, meta = load_checkpoint(path)
    kind = meta.get("kind")
    init = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta.get("init", {}).items()}
    rng = np.random.default_rng(0)
    if kind == "dvg":
        model = diffusion.VideoDenoiser(rng, **init)
    elif kind == "idm":
        model = inverse_dynamics.ActionDecoder(rng, **init)
    elif kind in ("lcbc", "rt1"):
        model = policies.make_policy(kind, rng, **init)
    elif kind == "classifier":
        from .pipeline import VariantClassifier
        model = VariantClassifier(rng, **init)
    else:
        raise ValueError(f"unknown checkpoint kind: {kind!r}")
    model.load_state(state)
    return model, meta
