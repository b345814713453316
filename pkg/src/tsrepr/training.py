"""Joint training loop and frozen-representation encoding.

Each iteration draws one crop-pair geometry for the batch, frequency-mixes
every instance with a random donor from the same batch to form the second
view, computes the hierarchical dual contrastive loss on the overlap of the
two un-masked views, reconstructs both randomly-masked views against their
un-masked targets, and takes one Adam step on the combined objective.

Everything is driven by a single seed; two runs with the same data and config
produce bit-identical parameters and loss records.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .augment import mix_values, random_crop_pair
from .data import Dataset, batches
from .encoder import EncoderConfig, encode, init_encoder, save_checkpoint
from .losses import hierarchical_dual_loss
from .optim import Adam
from .reconstruction import init_decoder, random_mask, recon_loss, reconstruct, total_loss

__all__ = ["TrainConfig", "TrainReport", "TrainingDiverged", "train", "encode_dataset"]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one pretraining run.

    ``iters`` counts batch updates; when None, ``epochs`` full passes are run
    instead.  ``universum_density`` 0 disables hard-negative synthesis (the
    ablation arm).
    """

    repr_dims: int = 64
    hidden_dims: int = 64
    depth: int = 4
    kernel_size: int = 3
    iters: Optional[int] = 200
    epochs: Optional[int] = None
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    alpha: float = 0.5
    mix_rate: float = 0.1
    mask_rate: float = 0.5
    temperature: float = 1.0
    universum_density: int = 1
    include_self_universums: bool = False
    recon_on: str = "masked"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.iters is None and self.epochs is None:
            raise ValueError("one of iters or epochs must be set")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainReport:
    """Per-iteration loss records plus run metadata.

    Every record satisfies ``total == l_dual + alpha * l_recon``.
    """

    records: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoint_path: Optional[str] = None

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def totals(self) -> np.ndarray:
        return np.asarray([rec["total"] for rec in self.records])


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the failing iteration."""

    def __init__(self, iteration: int, checkpoint_path: Optional[str]):
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
        where = f"; last good checkpoint: {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"non-finite loss at iteration {iteration}{where}")


def _states_to_numpy(enc: dict, dec: dict) -> dict[str, np.ndarray]:
    out = {f"encoder.{k}": v.data.copy() for k, v in enc.items()}
    out.update({f"decoder.{k}": v.data.copy() for k, v in dec.items()})
    return out


def checkpoint_config(enc_cfg: EncoderConfig, cfg: TrainConfig) -> dict:
    return {"encoder": asdict(enc_cfg), "train": cfg.to_dict()}


def split_checkpoint_state(state: dict[str, np.ndarray]) -> tuple[dict, dict]:
    """Split a flat checkpoint state into encoder / decoder parameter dicts."""
    enc = {k[len("encoder."):]: ad.parameter(v) for k, v in state.items()
           if k.startswith("encoder.")}
    dec = {k[len("decoder."):]: ad.parameter(v) for k, v in state.items()
           if k.startswith("decoder.")}
    return enc, dec


def train(ds: Dataset, cfg: TrainConfig, out_dir: Optional[str] = None
          ) -> tuple[dict, dict, TrainReport]:
    """Pretrain encoder and decoder on an unlabeled (or labeled) dataset.

    Returns the parameter dicts plus a :class:`TrainReport`.  When ``out_dir``
    is given, the final checkpoint and the JSONL report are written there.
    """
    if len(ds) < 2:
        raise ValueError("training needs at least 2 instances")
    enc_cfg = EncoderConfig(
        input_dims=ds.n_features, repr_dims=cfg.repr_dims,
        hidden_dims=cfg.hidden_dims, depth=cfg.depth, kernel_size=cfg.kernel_size,
    )
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0])
    loop_rng = np.random.default_rng(seeds[1])
    shuffle_root = cfg.seed

    enc = init_encoder(enc_cfg, init_rng)
    dec = init_decoder(cfg.repr_dims, ds.n_features, init_rng)
    params = list(enc.values()) + list(dec.values())
    opt = Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)

    values = np.nan_to_num(ds.values_array(), nan=0.0)
    observed = ds.observed_array()
    N, T, _ = values.shape

    max_iters = cfg.iters if cfg.iters is not None else cfg.epochs * max(
        1, len(batches(N, cfg.batch_size, 0)))
    report = TrainReport()
    last_good: Optional[dict[str, np.ndarray]] = None
    t_start = time.perf_counter()

    it = 0
    epoch = 0
    done = False
    while not done:
        epoch_seed = int(np.random.SeedSequence([shuffle_root & 0xFFFFFFFF, epoch]).generate_state(1)[0])
        for batch_idx in batches(N, cfg.batch_size, epoch_seed):
            if it >= max_iters:
                done = True
                break
            t0 = time.perf_counter()
            B = len(batch_idx)
            xb = values[batch_idx]
            ob = observed[batch_idx]

            # views: crop geometry shared across the batch, donors within it
            crop = random_crop_pair(T, loop_rng)
            donors = loop_rng.integers(0, B - 1, size=B)
            donors = donors + (donors >= np.arange(B))
            mixed = np.stack([
                mix_values(xb[i], xb[donors[i]], cfg.mix_rate, loop_rng) for i in range(B)
            ])
            view1 = xb[:, crop.a1:crop.b1]
            view2 = mixed[:, crop.a2:crop.b2]
            obs1 = ob[:, crop.a1:crop.b1]
            obs2 = ob[:, crop.a2:crop.b2]

            # contrastive pass on the un-masked views, aligned on the overlap
            r1 = encode(enc, enc_cfg, view1)
            r2 = encode(enc, enc_cfg, view2)
            w = crop.overlap_length
            p1 = ad.narrow(r1, 1, crop.a2 - crop.a1, w)
            p2 = ad.narrow(r2, 1, 0, w)
            l_dual, breakdown = hierarchical_dual_loss(
                p1, p2, loop_rng,
                temperature=cfg.temperature,
                universum_density=cfg.universum_density,
                include_self_universums=cfg.include_self_universums,
            )

            # reconstruction pass on the masked views
            m1 = random_mask(B, view1.shape[1], cfg.mask_rate, loop_rng)
            m2 = random_mask(B, view2.shape[1], cfg.mask_rate, loop_rng)
            r1m = encode(enc, enc_cfg, view1, hidden=m1.hidden)
            r2m = encode(enc, enc_cfg, view2, hidden=m2.hidden)
            l_recon = recon_loss(view1, view2, reconstruct(dec, r1m), reconstruct(dec, r2m),
                                 m1, m2, obs1, obs2, recon_on=cfg.recon_on)

            loss = total_loss(l_dual, l_recon, cfg.alpha)
            if not np.isfinite(loss.data):
                path = None
                if out_dir is not None and last_good is not None:
                    path = os.path.join(out_dir, "last_good.ckpt")
                    save_checkpoint(last_good, checkpoint_config(enc_cfg, cfg), path)
                raise TrainingDiverged(it, path)

            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            last_good = _states_to_numpy(enc, dec)

            report.records.append({
                "iter": it,
                "l_temp": breakdown.temporal_mean,
                "l_inst": breakdown.instance_mean,
                "l_dual": breakdown.dual,
                "l_recon": l_recon.item(),
                "total": loss.item(),
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            })
            it += 1
        epoch += 1

    report.wall_time_s = time.perf_counter() - t_start
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint.ckpt")
        save_checkpoint(_states_to_numpy(enc, dec), checkpoint_config(enc_cfg, cfg), ckpt)
        report.checkpoint_path = ckpt
        report.to_jsonl(os.path.join(out_dir, "report.jsonl"))
    return enc, dec, report


def encode_dataset(enc: dict, enc_cfg: EncoderConfig, ds: Dataset,
                   batch_size: int = 32) -> np.ndarray:
    """One K-vector per instance: max over time of the per-timestamp representations.

    Inference path: no masking, no augmentation.
    """
    values = np.nan_to_num(ds.values_array(), nan=0.0)
    out = []
    with ad.no_grad():
        for start in range(0, len(values), batch_size):
            r = encode(enc, enc_cfg, values[start:start + batch_size])
            out.append(r.data.max(axis=1))
    return np.concatenate(out, axis=0)
