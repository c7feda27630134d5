"""Model checkpoints as a directory of tensor files plus a meta record.

Each named parameter tensor goes to its own container file; meta.json
records the model geometry needed to rebuild ModelParams.  Writing is
deterministic (sorted keys, no timestamps), so identical models produce
identical checkpoint bytes.
"""

from __future__ import annotations

import json
import os

from .encoders import ClassificationHead, LinearEncoder, ModelParams
from .errors import DataError
from .tensorfile import load_tensor, save_tensor

META_FILE = "meta.json"
FORMAT_VERSION = 1


def save_checkpoint(directory, params, extra=None):
    """Write params into directory (one tensor file per parameter)."""
    os.makedirs(directory, exist_ok=True)
    tensors = params.named_tensors()
    for name, tensor in tensors.items():
        save_tensor(os.path.join(directory, f"{name}.xmrt"), tensor)
    meta = {
        "format": FORMAT_VERSION,
        "tensors": sorted(tensors),
        "has_heads": params.has_heads,
        "n_clusters": params.n_clusters if params.has_heads else None,
        "rng_seed": params.rng_seed,
        "extra": dict(extra) if extra else {},
    }
    with open(os.path.join(directory, META_FILE), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory):
    """Rebuild ModelParams from a checkpoint directory."""
    meta_path = os.path.join(directory, META_FILE)
    if not os.path.exists(meta_path):
        raise DataError(f"{directory}: not a checkpoint (no {META_FILE})")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != FORMAT_VERSION:
        raise DataError(
            f"{directory}: checkpoint format {meta.get('format')}, "
            f"expected {FORMAT_VERSION}")
    tensors = {}
    for name in meta["tensors"]:
        path = os.path.join(directory, f"{name}.xmrt")
        if not os.path.exists(path):
            raise DataError(f"{directory}: missing tensor file {name}.xmrt")
        tensors[name] = load_tensor(path)

    def need(name):
        if name not in tensors:
            raise DataError(f"{directory}: checkpoint lacks tensor {name}")
        return tensors[name]

    audio_enc = LinearEncoder(weight=need("audio_encoder.weight"),
                              bias=need("audio_encoder.bias"),
                              modality="audio")
    text_enc = LinearEncoder(weight=need("text_encoder.weight"),
                             bias=need("text_encoder.bias"),
                             modality="text")
    audio_head = text_head = None
    if meta.get("has_heads"):
        audio_head = ClassificationHead(
            w1=need("audio_head.w1"), b1=need("audio_head.b1"),
            w2=need("audio_head.w2"), b2=need("audio_head.b2"))
        text_head = ClassificationHead(
            w1=need("text_head.w1"), b1=need("text_head.b1"),
            w2=need("text_head.w2"), b2=need("text_head.b2"))
    return ModelParams(audio_encoder=audio_enc, text_encoder=text_enc,
                       audio_head=audio_head, text_head=text_head,
                       rng_seed=int(meta.get("rng_seed", 0)))


def read_checkpoint_extra(directory):
    """The free-form extra record stored alongside a checkpoint."""
    with open(os.path.join(directory, META_FILE), "r",
              encoding="utf-8") as fh:
        return json.load(fh).get("extra", {})
