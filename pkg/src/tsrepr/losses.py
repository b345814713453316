"""Hierarchical dual contrastive loss with synthesized universum hard negatives.

Positive pairs are the representations of the same timestamp in two augmented
views (restricted to the crop overlap).  Negatives come from two axes:

* temporal: other timestamps of the same instance, in both views;
* instance: the same timestamp of other instances in the batch, in both views.

On each axis an equal population of *universums* is synthesized by convex
mixing of every anchor with one of its negatives (anchor coefficient drawn
from (0, 0.5], so the negative always dominates).  Mixes sit close to the
anchor in embedding space and act as hard negatives.  Similarity is the raw
dot product; an optional temperature divides all logits (default 1 = off).

The hierarchical wrapper recomputes both terms on max-pooled representations
at every time scale, synthesizing fresh universums per level, and averages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "UniversumDraw",
    "LossBreakdown",
    "synth_temporal_universums",
    "synth_instance_universums",
    "temporal_loss",
    "instance_loss",
    "hierarchical_dual_loss",
    "universum_hardness",
]

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class UniversumDraw:
    """One synthesized universum per (instance, timestamp), both views.

    ``u[i, t] == lam[i, t] * anchor[i, t] + (1 - lam[i, t]) * partner`` holds
    bit-exactly; the same ``lam`` and partner index are reused for the primed
    view so the two views' universums stay aligned.
    """

    kind: str  # "temporal" | "instance"
    u: Tensor
    up: Tensor
    lam: np.ndarray
    partner: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    """Per-level loss terms of one hierarchical dual-loss evaluation."""

    level_temporal: tuple[float, ...]
    level_instance: tuple[float, ...]
    dual: float

    @property
    def levels(self) -> int:
        return len(self.level_temporal)

    @property
    def temporal_mean(self) -> float:
        return float(np.mean(self.level_temporal))

    @property
    def instance_mean(self) -> float:
        return float(np.mean(self.level_instance))


def _mix_lambda(rng: np.random.Generator, shape) -> np.ndarray:
    # anchor coefficient in (0, 0.5]: the anchor never dominates the mix
    return 0.5 * (1.0 - rng.random(shape))


def synth_temporal_universums(r: Tensor, rp: Tensor, rng: SeedLike) -> Optional[UniversumDraw]:
    """Mix every (i, t) anchor with a random other timestamp t' of instance i.

    Returns None when the window has a single timestamp (no t' exists);
    callers treat that as "temporal universums skipped".
    """
    rng = _rng(rng)
    B, W, _ = r.shape
    if W < 2:
        return None
    lam = _mix_lambda(rng, (B, W, 1))
    draws = rng.integers(0, W - 1, size=(B, W))
    idx = draws + (draws >= np.arange(W)[None, :])  # uniform over {0..W-1} \ {t}
    one_minus = 1.0 - lam
    u = ad.add(ad.mul(r, ad.constant(lam)), ad.mul(ad.gather_time(r, idx), ad.constant(one_minus)))
    up = ad.add(ad.mul(rp, ad.constant(lam)), ad.mul(ad.gather_time(rp, idx), ad.constant(one_minus)))
    return UniversumDraw(kind="temporal", u=u, up=up, lam=lam, partner=idx)


def synth_instance_universums(r: Tensor, rp: Tensor, rng: SeedLike) -> UniversumDraw:
    """Mix every (i, t) anchor with the same timestamp of a random other instance."""
    rng = _rng(rng)
    B, W, _ = r.shape
    if B < 2:
        raise ValueError(f"instance universums need a batch of >= 2, got B={B}")
    lam = _mix_lambda(rng, (B, W, 1))
    draws = rng.integers(0, B - 1, size=(B, W))
    jdx = draws + (draws >= np.arange(B)[:, None])  # uniform over {0..B-1} \ {i}
    one_minus = 1.0 - lam
    u = ad.add(ad.mul(r, ad.constant(lam)), ad.mul(ad.gather_batch(r, jdx), ad.constant(one_minus)))
    up = ad.add(ad.mul(rp, ad.constant(lam)), ad.mul(ad.gather_batch(rp, jdx), ad.constant(one_minus)))
    return UniversumDraw(kind="instance", u=u, up=up, lam=lam, partner=jdx)


def _check_finite(r: Tensor, rp: Tensor) -> None:
    if not (np.isfinite(r.data).all() and np.isfinite(rp.data).all()):
        raise ValueError("contrastive loss received non-finite representations")


def _bmm_t(a: Tensor, b: Tensor) -> Tensor:
    return ad.matmul(a, ad.transpose(b, (0, 2, 1)))


def _nce_rows(pos: Tensor, blocks: list[Tensor], masks: list[np.ndarray],
              inv_temp: float) -> Tensor:
    """-log softmax of the positive against itself plus masked negative blocks."""
    x = ad.concat([ad.reshape(pos, (*pos.shape, 1))] + blocks, axis=2)
    n_rows = pos.shape[-1]
    mask = np.concatenate(
        [np.ones((n_rows, 1), dtype=bool)] + masks, axis=1,
    )
    if inv_temp != 1.0:
        x = ad.mul(x, inv_temp)
        pos = ad.mul(pos, inv_temp)
    return ad.sub(ad.logsumexp(x, mask=mask), pos)


def temporal_loss(r: Tensor, rp: Tensor, universums: list[UniversumDraw],
                  temperature: float = 1.0) -> Tensor:
    """Timestamp-discrimination loss within each instance, averaged over (i, t).

    Negatives for anchor (i, t): both views at every other overlap timestamp,
    plus every temporal universum of instance i (including the anchor's own).
    Both views act as anchor; the two directions are averaged.
    """
    _check_finite(r, rp)
    B, W, _ = r.shape
    inv_temp = 1.0 / temperature
    pos = ad.tsum(ad.mul(r, rp), axis=2)  # (B, W)

    offdiag = ~np.eye(W, dtype=bool)
    unis = [d for d in universums if d is not None and d.kind == "temporal"]

    def direction(anchor: Tensor, same: Tensor, other: Tensor) -> Tensor:
        blocks = [_bmm_t(anchor, same), _bmm_t(anchor, other)]
        masks = [offdiag, offdiag]
        for d in unis:
            blocks += [_bmm_t(anchor, d.u), _bmm_t(anchor, d.up)]
            masks += [np.ones((W, W), dtype=bool)] * 2
        return _nce_rows(pos, blocks, masks, inv_temp)

    loss = ad.add(direction(r, r, rp), direction(rp, rp, r))
    return ad.tmean(ad.mul(loss, 0.5))


def instance_loss(r: Tensor, rp: Tensor, universums: list[UniversumDraw],
                  temperature: float = 1.0, include_self_universums: bool = False) -> Tensor:
    """Instance-discrimination loss at each timestamp, averaged over (i, t).

    Negatives for anchor (i, t): both views of every other instance at t, plus
    the instance universums at t.  By default the universum synthesized *for*
    anchor i is excluded from its own negative set (``include_self_universums``
    flips that, for the reading where the index set also covers j = i).
    """
    _check_finite(r, rp)
    B, W, _ = r.shape
    if B < 2:
        raise ValueError(f"instance loss needs a batch of >= 2, got B={B}")
    inv_temp = 1.0 / temperature

    rt = ad.transpose(r, (1, 0, 2))    # (W, B, K)
    rpt = ad.transpose(rp, (1, 0, 2))
    pos = ad.tsum(ad.mul(rt, rpt), axis=2)  # (W, B)

    offdiag = ~np.eye(B, dtype=bool)
    uni_mask = np.ones((B, B), dtype=bool) if include_self_universums else offdiag
    unis = [d for d in universums if d is not None and d.kind == "instance"]
    uts = [(ad.transpose(d.u, (1, 0, 2)), ad.transpose(d.up, (1, 0, 2))) for d in unis]

    def direction(anchor: Tensor, same: Tensor, other: Tensor) -> Tensor:
        blocks = [_bmm_t(anchor, same), _bmm_t(anchor, other)]
        masks = [offdiag, offdiag]
        for ut, upt in uts:
            blocks += [_bmm_t(anchor, ut), _bmm_t(anchor, upt)]
            masks += [uni_mask, uni_mask]
        return _nce_rows(pos, blocks, masks, inv_temp)

    loss = ad.add(direction(rt, rt, rpt), direction(rpt, rpt, rt))
    return ad.tmean(ad.mul(loss, 0.5))


def hierarchical_dual_loss(r: Tensor, rp: Tensor, seed: SeedLike,
                           temperature: float = 1.0, universum_density: int = 1,
                           include_self_universums: bool = False
                           ) -> tuple[Tensor, LossBreakdown]:
    """Dual loss averaged over time scales.

    At each level both loss terms are computed with freshly synthesized
    universums from the current-level representations, then both views are
    max-pooled (kernel 2, ceil semantics) along time.  The final level has a
    single timestamp, where the temporal term degenerates to zero.
    """
    if r.shape != rp.shape:
        raise ValueError(f"view shapes differ: {r.shape} vs {rp.shape}")
    if universum_density < 0:
        raise ValueError(f"universum_density must be >= 0, got {universum_density}")
    rng = _rng(seed)
    terms: list[Tensor] = []
    level_t: list[float] = []
    level_i: list[float] = []
    while True:
        draws: list[Optional[UniversumDraw]] = []
        for _ in range(universum_density):
            draws.append(synth_temporal_universums(r, rp, rng))
            draws.append(synth_instance_universums(r, rp, rng))
        lt = temporal_loss(r, rp, draws, temperature)
        li = instance_loss(r, rp, draws, temperature, include_self_universums)
        terms.append(ad.add(lt, li))
        level_t.append(lt.item())
        level_i.append(li.item())
        if r.shape[1] == 1:
            break
        r = ad.maxpool1d_time(r, 2)
        rp = ad.maxpool1d_time(rp, 2)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    total = ad.mul(total, 1.0 / len(terms))
    breakdown = LossBreakdown(
        level_temporal=tuple(level_t),
        level_instance=tuple(level_i),
        dual=total.item(),
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# hardness diagnostics


def universum_hardness(r: np.ndarray, rp: np.ndarray, seed: SeedLike,
                       include_self_universums: bool = False) -> dict:
    """Level-0 similarity statistics of universums vs ordinary negatives.

    For every view-1 anchor (i, t), collects the dot similarity to its
    ordinary negatives (both views, both axes) and to its universum negatives,
    and reports the means plus the share of anchors whose positive outranks
    every negative (the retrieval proxy), with and without universums.
    """
    rng = _rng(seed)
    r_t = ad.constant(np.asarray(r, dtype=np.float64))
    rp_t = ad.constant(np.asarray(rp, dtype=np.float64))
    B, W, _ = r_t.shape

    t_draw = synth_temporal_universums(r_t, rp_t, rng)
    i_draw = synth_instance_universums(r_t, rp_t, rng)

    rd, rpd = r_t.data, rp_t.data
    pos = np.einsum("itk,itk->it", rd, rpd)

    offdiag_t = ~np.eye(W, dtype=bool)
    offdiag_b = ~np.eye(B, dtype=bool)
    uni_inst_mask = np.ones((B, B), dtype=bool) if include_self_universums else offdiag_b

    # ordinary negatives: (B, W, cols) similarity blocks plus keep-masks
    neg_blocks = [
        (np.einsum("itk,isk->its", rd, rd), offdiag_t),
        (np.einsum("itk,isk->its", rd, rpd), offdiag_t),
        (np.einsum("itk,jtk->itj", rd, rd), offdiag_b[:, None, :]),
        (np.einsum("itk,jtk->itj", rd, rpd), offdiag_b[:, None, :]),
    ]
    uni_blocks = []
    if t_draw is not None:
        uni_blocks += [
            (np.einsum("itk,isk->its", rd, t_draw.u.data), np.ones((W, W), dtype=bool)),
            (np.einsum("itk,isk->its", rd, t_draw.up.data), np.ones((W, W), dtype=bool)),
        ]
    uni_blocks += [
        (np.einsum("itk,jtk->itj", rd, i_draw.u.data), uni_inst_mask[:, None, :]),
        (np.einsum("itk,jtk->itj", rd, i_draw.up.data), uni_inst_mask[:, None, :]),
    ]

    def stats(blocks):
        total, count = 0.0, 0
        top = np.full((B, W), -np.inf)
        for sims, keep in blocks:
            keep = np.broadcast_to(keep, sims.shape)
            total += sims[keep].sum()
            count += int(keep.sum())
            masked = np.where(keep, sims, -np.inf)
            top = np.maximum(top, masked.max(axis=-1))
        mean = total / count if count else float("nan")
        return mean, top

    mean_neg, top_neg = stats(neg_blocks)
    mean_uni, top_uni = stats(uni_blocks)
    n_anchors = B * W
    ok_plain = pos > top_neg
    ok_uni = ok_plain & (pos > top_uni)
    return {
        "mean_universum_sim": float(mean_uni),
        "mean_negative_sim": float(mean_neg),
        "pos_top1_rate": float(ok_plain.mean()),
        "pos_top1_rate_with_universums": float(ok_uni.mean()),
        "n_anchors": n_anchors,
    }
