"""Versioned policy checkpoints.

Layout: one text header line, one JSON line (architecture descriptor and
named parameter shapes), then every parameter flattened to little-endian
float32 in declaration order. Saving snaps the live parameters to storage
precision first, so the written file and the policy in memory agree
exactly from then on.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .nets import build_from_descriptor

MAGIC = "deskmanip-checkpoint v1"


def checkpoint_save(policy: torch.nn.Module, path: str,
                    meta: dict | None = None) -> None:
    names, shapes, blobs = [], [], []
    with torch.no_grad():
        for name, p in policy.named_parameters():
            q = p.data.to(torch.float32)
            p.data.copy_(q.to(p.dtype))
            names.append(name)
            shapes.append(list(q.shape))
            blobs.append(q.numpy().astype("<f4").tobytes())
    if meta is None:
        meta = getattr(policy, "checkpoint_meta", {})
    header = {"arch": policy.descriptor(),
              "params": [{"name": n, "shape": s}
                         for n, s in zip(names, shapes)],
              "meta": meta}
    with open(path, "wb") as f:
        f.write((MAGIC + "\n").encode())
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for b in blobs:
            f.write(b)


def checkpoint_load(path: str) -> torch.nn.Module:
    with open(path, "rb") as f:
        magic = f.readline().decode().rstrip("\n")
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint header {magic!r}, "
                             f"expected {MAGIC!r}")
        header = json.loads(f.readline().decode())
        payload = f.read()

    policy = build_from_descriptor(header["arch"])
    entries = {e["name"]: e["shape"] for e in header["params"]}
    offset = 0
    with torch.no_grad():
        for name, p in policy.named_parameters():
            if name not in entries:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            shape = tuple(entries[name])
            if shape != tuple(p.shape):
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {shape}, "
                    f"architecture {tuple(p.shape)}")
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 4
            if offset + nbytes > len(payload):
                raise ValueError("checkpoint payload truncated")
            arr = np.frombuffer(payload, dtype="<f4", count=count,
                                offset=offset).reshape(shape)
            p.data.copy_(torch.from_numpy(arr.copy()).to(p.dtype))
            offset += nbytes
    if offset != len(payload):
        raise ValueError("checkpoint payload has trailing bytes")
    policy.checkpoint_meta = header["meta"]
    return policy
