"""Per-timestamp embedding network: input projection + dilated causal conv blocks.

Block ``d`` runs two causal convolutions at dilation ``2**d`` with GELU
pre-activations and a residual shortcut, following the standard temporal
convolution construction.  An optional hide-mask zeroes the post-projection
latents of selected timestamps before the conv stack, so information about a
hidden step can only re-enter from its (past) neighbors.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "EncoderConfig",
    "init_encoder",
    "encoder_param_names",
    "encode",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"TSRECKPT"
_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dims: int
    repr_dims: int = 64
    hidden_dims: int = 64
    depth: int = 4
    kernel_size: int = 3

    def __post_init__(self):
        for name in ("input_dims", "repr_dims", "hidden_dims", "depth", "kernel_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fan-in scaled uniform init; the output head starts at zero.

    A zero head makes a freshly initialized encoder emit all-zero
    representations (the residual trunk still carries signal, so training
    escapes immediately); this is the usual zero-init-output-layer trick for
    residual nets and gives evaluation a clean untrained baseline.
    """
    F, H, K, k = cfg.input_dims, cfg.hidden_dims, cfg.repr_dims, cfg.kernel_size
    params: dict[str, Tensor] = {}
    params["in_proj.w"] = ad.parameter(_uniform(rng, (F, H), F))
    params["in_proj.b"] = ad.parameter(_uniform(rng, (H,), F))
    for d in range(cfg.depth):
        for conv in ("conv1", "conv2"):
            params[f"blocks.{d}.{conv}.w"] = ad.parameter(_uniform(rng, (H, H, k), H * k))
            params[f"blocks.{d}.{conv}.b"] = ad.parameter(_uniform(rng, (H,), H * k))
    params["head.w"] = ad.parameter(np.zeros((H, K)))
    params["head.b"] = ad.parameter(np.zeros((K,)))
    return params


def encoder_param_names(cfg: EncoderConfig) -> list[str]:
    names = ["in_proj.w", "in_proj.b"]
    for d in range(cfg.depth):
        names += [f"blocks.{d}.conv1.w", f"blocks.{d}.conv1.b",
                  f"blocks.{d}.conv2.w", f"blocks.{d}.conv2.b"]
    names += ["head.w", "head.b"]
    return names


def _pointwise_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    B, T, _ = x.shape
    out = ad.matmul(ad.reshape(x, (B * T, x.shape[2])), w)
    out = ad.add(out, b)
    return ad.reshape(out, (B, T, w.shape[1]))


def encode(params: dict[str, Tensor], cfg: EncoderConfig, x: np.ndarray,
           hidden: Optional[np.ndarray] = None) -> Tensor:
    """Map (B, T, F) values to (B, T, K) representations.

    ``hidden`` is an optional (B, T) boolean mask marking timestamps whose
    inputs must be hidden from the model; their projected latents are zeroed
    before the conv stack.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"encode expects (B, T, F) input, got shape {x.shape}")
    if x.shape[2] != cfg.input_dims:
        raise ValueError(f"input has F={x.shape[2]} but encoder expects F={cfg.input_dims}")
    if not np.isfinite(x).all():
        raise ValueError("encode input contains non-finite values")

    z = _pointwise_linear(ad.constant(x), params["in_proj.w"], params["in_proj.b"])
    if hidden is not None:
        hidden = np.asarray(hidden, dtype=bool)
        if hidden.shape != x.shape[:2]:
            raise ValueError(f"hidden mask shape {hidden.shape} != (B, T) {x.shape[:2]}")
        keep = (~hidden).astype(np.float64)[:, :, None]
        z = ad.mul(z, ad.constant(keep))

    for d in range(cfg.depth):
        dilation = 2 ** d
        h = ad.gelu(z)
        h = ad.dilated_causal_conv1d(h, params[f"blocks.{d}.conv1.w"], dilation=dilation)
        h = ad.add(h, params[f"blocks.{d}.conv1.b"])
        h = ad.gelu(h)
        h = ad.dilated_causal_conv1d(h, params[f"blocks.{d}.conv2.w"], dilation=dilation)
        h = ad.add(h, params[f"blocks.{d}.conv2.b"])
        z = ad.add(h, z)  # residual; channel counts match throughout the trunk
    return _pointwise_linear(z, params["head.w"], params["head.b"])


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, config JSON, then named tensors


def save_checkpoint(state: dict[str, np.ndarray], config: dict, path) -> None:
    """Write named float64 tensors plus a JSON config blob.

    Tensors are written in sorted-name order so identical states always
    produce byte-identical files.
    """
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    names = sorted(state)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(state[name], dtype=np.float64)
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; raises on bad magic, version mismatch or truncation."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(_MAGIC), "magic")
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise ValueError(f"checkpoint version {version} unsupported (expected {_VERSION})")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config = json.loads(_read_exact(fh, cfg_len, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "tensor rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"dim of {name}"))[0]
                for _ in range(rank)
            )
            n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
            raw = _read_exact(fh, n_bytes, f"data of {name}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after last tensor; corrupt checkpoint")
    return state, config
