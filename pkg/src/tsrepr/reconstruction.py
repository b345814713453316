"""Masked time reconstruction: random masks, pointwise decoder, masked MSE.

Whole timestamps are hidden at random; the encoder sees the views with those
latents zeroed, a single linear map decodes each timestamp's representation
back to feature space, and the squared error is scored only where ground
truth exists.  By default the loss covers the *masked* positions (the
masked-autoencoding reading); ``recon_on="observed"`` scores the complement
instead, matching the literal error-weighting alternative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from ._validation import check_fraction

__all__ = [
    "MaskSpec",
    "random_mask",
    "init_decoder",
    "reconstruct",
    "recon_loss",
    "total_loss",
]

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class MaskSpec:
    """Per-timestamp observation flags: True = visible to the encoder."""

    observed: np.ndarray  # (B, T) bool
    rate: float

    @property
    def hidden(self) -> np.ndarray:
        return ~self.observed


def random_mask(B: int, T: int, rate: float, seed: SeedLike) -> MaskSpec:
    """Independent Bernoulli(1 - rate) observed flags per (b, t).

    Masking hides whole timestamps (all features at once).  ``rate`` is the
    expected hidden fraction and must lie strictly inside (0, 1).
    """
    rate = check_fraction(rate, "rate", closed_low=False, closed_high=False)
    rng = _rng(seed)
    observed = rng.random((B, T)) >= rate
    return MaskSpec(observed=observed, rate=rate)


def init_decoder(repr_dims: int, n_features: int,
                 rng: np.random.Generator) -> dict[str, Tensor]:
    bound = 1.0 / np.sqrt(repr_dims)
    return {
        "dec.w": ad.parameter(rng.uniform(-bound, bound, size=(repr_dims, n_features))),
        "dec.b": ad.parameter(rng.uniform(-bound, bound, size=(n_features,))),
    }


def reconstruct(decoder: dict[str, Tensor], r: Tensor) -> Tensor:
    """Pointwise linear map (B, T, K) -> (B, T, F)."""
    if r.ndim != 3:
        raise ValueError(f"reconstruct expects (B, T, K) representations, got {r.shape}")
    if r.shape[2] != decoder["dec.w"].shape[0]:
        raise ValueError(
            f"representation K={r.shape[2]} does not match decoder K={decoder['dec.w'].shape[0]}"
        )
    B, T, K = r.shape
    out = ad.matmul(ad.reshape(r, (B * T, K)), decoder["dec.w"])
    out = ad.add(out, decoder["dec.b"])
    return ad.reshape(out, (B, T, decoder["dec.w"].shape[1]))


def _score_weights(mask: MaskSpec, data_observed: np.ndarray, recon_on: str) -> np.ndarray:
    """0/1 weights over (B, T, F): where the squared error counts.

    Positions with no ground truth (missing in the source data) never score,
    whichever reading is active.
    """
    flags = mask.observed[:, :, None] if recon_on == "observed" else mask.hidden[:, :, None]
    return (flags & data_observed).astype(np.float64)


def recon_loss(x: np.ndarray, x_aug: np.ndarray, xt: Tensor, xt_aug: Tensor,
               mask: MaskSpec, mask_aug: MaskSpec,
               observed: np.ndarray, observed_aug: np.ndarray,
               recon_on: str = "masked") -> Tensor:
    """Masked MSE over both views, normalized by 1 / (2 * batch).

    ``x``/``x_aug`` are the un-masked target windows, ``xt``/``xt_aug`` their
    reconstructions.  Scored positions contribute the squared error; all other
    positions contribute exactly zero loss and zero gradient.  If nothing is
    scored in the whole batch the loss is zero and a warning is emitted.
    """
    if recon_on not in ("masked", "observed"):
        raise ValueError(f"recon_on must be 'masked' or 'observed', got {recon_on!r}")
    x = np.asarray(x, dtype=np.float64)
    x_aug = np.asarray(x_aug, dtype=np.float64)
    if xt.shape != x.shape:
        raise ValueError(f"reconstruction shape {xt.shape} != target shape {x.shape}")
    if xt_aug.shape != x_aug.shape:
        raise ValueError(f"augmented reconstruction shape {xt_aug.shape} != {x_aug.shape}")
    B = x.shape[0]
    w1 = _score_weights(mask, observed, recon_on)
    w2 = _score_weights(mask_aug, observed_aug, recon_on)
    if w1.sum() == 0 and w2.sum() == 0:
        warnings.warn("recon_loss: no scored positions in this batch; loss is 0", RuntimeWarning)
        return ad.constant(0.0)

    def view_term(xt_v: Tensor, target: np.ndarray, w: np.ndarray) -> Tensor:
        diff = ad.mul(ad.sub(xt_v, ad.constant(np.where(w > 0, target, 0.0))), ad.constant(w))
        return ad.tsum(ad.mul(diff, diff))

    total = ad.add(view_term(xt, x, w1), view_term(xt_aug, x_aug, w2))
    return ad.mul(total, 1.0 / (2.0 * B))


def total_loss(l_dual: Tensor, l_recon: Tensor, alpha: float) -> Tensor:
    """Joint objective: contrastive plus alpha-weighted reconstruction."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return ad.add(l_dual, ad.mul(l_recon, alpha))
