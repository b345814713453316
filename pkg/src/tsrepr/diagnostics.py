"""Independent reference implementations and self-check suites.

The naive loss oracles recompute the contrastive terms with per-anchor Python
loops and direct log/exp arithmetic; they share nothing with the vectorized
path except the synthesized universum arrays.  The finite-difference harness
checks analytic gradients of any scalar-producing closure.  ``run_selftest``
bundles the suites behind the CLI.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .augment import dft, idft, sample_crop_pairs
from .encoder import EncoderConfig, encode, init_encoder
from .losses import (
    UniversumDraw,
    hierarchical_dual_loss,
    instance_loss,
    synth_instance_universums,
    synth_temporal_universums,
    temporal_loss,
)
from .reconstruction import init_decoder, random_mask, recon_loss, reconstruct, total_loss

__all__ = [
    "naive_temporal_loss",
    "naive_instance_loss",
    "finite_difference_check",
    "check_op_gradients",
    "full_loss_closure",
    "run_selftest",
]


# ---------------------------------------------------------------------------
# naive contrastive-loss oracles (per-anchor enumeration)


def _nce(pos: float, negs: list[float], inv_temp: float) -> float:
    pos *= inv_temp
    den = math.exp(pos) + sum(math.exp(s * inv_temp) for s in negs)
    return -math.log(math.exp(pos) / den)


def naive_temporal_loss(r: np.ndarray, rp: np.ndarray,
                        universums: Sequence[tuple[np.ndarray, np.ndarray]] = (),
                        temperature: float = 1.0) -> float:
    """Loop-based evaluation of the timestamp-discrimination loss."""
    B, W, _ = r.shape
    inv_temp = 1.0 / temperature
    total = 0.0
    for i in range(B):
        for t in range(W):
            pos = float(r[i, t] @ rp[i, t])
            for a, same, other in ((r[i, t], r, rp), (rp[i, t], rp, r)):
                negs = []
                for tp in range(W):
                    if tp != t:
                        negs.append(float(a @ same[i, tp]))
                        negs.append(float(a @ other[i, tp]))
                for u, up in universums:
                    for tp in range(W):
                        negs.append(float(a @ u[i, tp]))
                        negs.append(float(a @ up[i, tp]))
                total += 0.5 * _nce(pos, negs, inv_temp)
    return total / (B * W)


def naive_instance_loss(r: np.ndarray, rp: np.ndarray,
                        universums: Sequence[tuple[np.ndarray, np.ndarray]] = (),
                        temperature: float = 1.0,
                        include_self_universums: bool = False) -> float:
    """Loop-based evaluation of the instance-discrimination loss."""
    B, W, _ = r.shape
    inv_temp = 1.0 / temperature
    total = 0.0
    for i in range(B):
        for t in range(W):
            pos = float(r[i, t] @ rp[i, t])
            for a, same, other in ((r[i, t], r, rp), (rp[i, t], rp, r)):
                negs = []
                for j in range(B):
                    if j != i:
                        negs.append(float(a @ same[j, t]))
                        negs.append(float(a @ other[j, t]))
                for u, up in universums:
                    for j in range(B):
                        if include_self_universums or j != i:
                            negs.append(float(a @ u[j, t]))
                            negs.append(float(a @ up[j, t]))
                total += 0.5 * _nce(pos, negs, inv_temp)
    return total / (B * W)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_difference_check(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                            h: float = 1e-5, max_elements: int = 10_000) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the scalar loss from the (mutated in place) ``leaves``
    on every call.  Relative error uses a unit floor in the denominator.
    """
    for t in leaves:
        t.grad = None
    loss = fn()
    ad.backward(loss)
    worst = 0.0
    for t in leaves:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        analytic = analytic.reshape(-1)
        flat = t.data.reshape(-1)
        if flat.size > max_elements:
            raise ValueError("tensor too large for finite-difference sweep")
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = fn().item()
            flat[idx] = orig - h
            f_minus = fn().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]), abs(numeric))
            worst = max(worst, err)
    return worst


def check_op_gradients(seed: int) -> list[tuple[str, float]]:
    """FD-check every differentiable op on small random tensors (<= 64 elements)."""
    rng = np.random.default_rng(seed)

    def leaf(*shape):
        return ad.parameter(rng.standard_normal(shape))

    results = []
    cases: list[tuple[str, Callable[[], Tensor], list[Tensor]]] = []

    x = leaf(3, 4)
    y = leaf(3, 4)
    w = rng.standard_normal((3, 4))
    cases.append(("add", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.add(x, y), ad.constant(w))), [x, y]))
    x = leaf(3, 4); y = leaf(3, 4); w = rng.standard_normal((3, 4))
    cases.append(("mul", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.mul(x, y), ad.constant(w))), [x, y]))
    x = leaf(2, 1, 4); y = leaf(2, 3, 4); w = rng.standard_normal((2, 3, 4))
    cases.append(("broadcast_add", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.add(x, y), ad.constant(w))), [x, y]))
    x = leaf(4, 3); y = leaf(3, 5); w = rng.standard_normal((4, 5))
    cases.append(("matmul2d", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.matmul(x, y), ad.constant(w))), [x, y]))
    x = leaf(2, 3, 4); y = leaf(2, 4, 3); w = rng.standard_normal((2, 3, 3))
    cases.append(("matmul3d", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.matmul(x, y), ad.constant(w))), [x, y]))
    x = leaf(2, 3, 4); w = rng.standard_normal((4, 3, 2))
    cases.append(("transpose", lambda x=x, w=w: ad.tsum(ad.mul(ad.transpose(x, (2, 1, 0)), ad.constant(w))), [x]))
    x = leaf(2, 6); w = rng.standard_normal((3, 4))
    cases.append(("reshape", lambda x=x, w=w: ad.tsum(ad.mul(ad.reshape(x, (3, 4)), ad.constant(w))), [x]))
    x = leaf(2, 6, 3); w = rng.standard_normal((2, 3, 3))
    cases.append(("narrow", lambda x=x, w=w: ad.tsum(ad.mul(ad.narrow(x, 1, 2, 3), ad.constant(w))), [x]))
    x = leaf(2, 2, 3); y = leaf(2, 4, 3); w = rng.standard_normal((2, 6, 3))
    cases.append(("concat", lambda x=x, y=y, w=w: ad.tsum(ad.mul(ad.concat([x, y], 1), ad.constant(w))), [x, y]))
    x = leaf(3, 5); w = rng.standard_normal((3,))
    cases.append(("sum_axis", lambda x=x, w=w: ad.tsum(ad.mul(ad.tsum(x, axis=1), ad.constant(w))), [x]))
    x = leaf(3, 5)
    cases.append(("mean", lambda x=x: ad.tmean(ad.mul(x, x)), [x]))
    x = leaf(3, 4)
    cases.append(("exp", lambda x=x: ad.tsum(ad.exp(ad.mul(x, 0.5))), [x]))
    x = ad.parameter(rng.uniform(0.5, 2.0, (3, 4)))
    cases.append(("log", lambda x=x: ad.tsum(ad.log(x)), [x]))
    x = leaf(3, 4)
    cases.append(("gelu", lambda x=x: ad.tsum(ad.gelu(x)), [x]))
    x = leaf(3, 7)
    mask = rng.random((3, 7)) > 0.3
    mask[:, 0] = True
    cases.append(("logsumexp", lambda x=x, mask=mask: ad.tsum(ad.logsumexp(x, mask=mask)), [x]))
    x = leaf(2, 5, 3)
    idx = rng.integers(0, 5, size=(2, 5))
    w = rng.standard_normal((2, 5, 3))
    cases.append(("gather_time", lambda x=x, idx=idx, w=w: ad.tsum(ad.mul(ad.gather_time(x, idx), ad.constant(w))), [x]))
    x = leaf(4, 3, 2)
    idx = rng.integers(0, 4, size=(4, 3))
    w = rng.standard_normal((4, 3, 2))
    cases.append(("gather_batch", lambda x=x, idx=idx, w=w: ad.tsum(ad.mul(ad.gather_batch(x, idx), ad.constant(w))), [x]))
    x = leaf(2, 6, 2)
    k = leaf(3, 2, 2)
    w = rng.standard_normal((2, 6, 3))
    cases.append(("conv_d1", lambda x=x, k=k, w=w: ad.tsum(ad.mul(ad.dilated_causal_conv1d(x, k, 1), ad.constant(w))), [x, k]))
    x = leaf(2, 6, 2)
    k = leaf(2, 2, 3)
    w = rng.standard_normal((2, 6, 2))
    cases.append(("conv_d2", lambda x=x, k=k, w=w: ad.tsum(ad.mul(ad.dilated_causal_conv1d(x, k, 2), ad.constant(w))), [x, k]))
    x = leaf(2, 7, 3)
    w = rng.standard_normal((2, 4, 3))
    cases.append(("maxpool", lambda x=x, w=w: ad.tsum(ad.mul(ad.maxpool1d_time(x, 2), ad.constant(w))), [x]))

    for name, fn, leaves in cases:
        results.append((name, finite_difference_check(fn, leaves)))
    return results


def full_loss_closure(seed: int, B: int = 2, T: int = 8, F: int = 2,
                      alpha: float = 0.5, universum_density: int = 1):
    """Tiny end-to-end objective as a deterministic function of its parameters.

    Returns ``(fn, leaves)`` where ``fn`` rebuilds L = L_dual + alpha * L_recon
    with frozen data, crops, masks and universum draws.
    """
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(input_dims=F, repr_dims=3, hidden_dims=4, depth=2, kernel_size=2)
    enc = init_encoder(cfg, rng)
    # the head starts at zero; nudge it so gradients reach every layer
    enc["head.w"].data += rng.uniform(-0.5, 0.5, enc["head.w"].shape)
    dec = init_decoder(cfg.repr_dims, F, rng)
    x1 = rng.standard_normal((B, T, F))
    x2 = rng.standard_normal((B, T, F))
    m1 = random_mask(B, T, 0.5, rng)
    m2 = random_mask(B, T, 0.5, rng)
    obs = np.ones((B, T, F), dtype=bool)
    loss_seed = int(rng.integers(0, 2**31))

    def fn():
        r1 = encode(enc, cfg, x1)
        r2 = encode(enc, cfg, x2)
        l_dual, _ = hierarchical_dual_loss(
            r1, r2, loss_seed, universum_density=universum_density)
        r1m = encode(enc, cfg, x1, hidden=m1.hidden)
        r2m = encode(enc, cfg, x2, hidden=m2.hidden)
        l_rec = recon_loss(x1, x2, reconstruct(dec, r1m), reconstruct(dec, r2m),
                           m1, m2, obs, obs)
        return total_loss(l_dual, l_rec, alpha)

    leaves = list(enc.values()) + list(dec.values())
    return fn, leaves


# ---------------------------------------------------------------------------
# selftest suites


def _suite_dft(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in range(1, 129):
        x = rng.standard_normal(T)
        spec = dft(x)
        worst = max(worst, float(np.abs(spec - np.fft.fft(x)).max()))
        worst = max(worst, float(np.abs(idft(spec).real - x).max()))
    ok = worst <= 1e-9
    return ok, f"max round-trip/fft deviation {worst:.3e} over T in 1..128"


def _suite_loss_bruteforce(n_cases: int = 50, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        B = int(rng.integers(2, 4))
        W = int(rng.integers(1, 5))
        K = int(rng.integers(1, 4))
        r = ad.constant(rng.standard_normal((B, W, K)))
        rp = ad.constant(rng.standard_normal((B, W, K)))
        with_uni = bool(rng.integers(0, 2))
        draws: list[UniversumDraw] = []
        if with_uni:
            d = synth_temporal_universums(r, rp, rng)
            if d is not None:
                draws.append(d)
            draws.append(synth_instance_universums(r, rp, rng))
        t_pairs = [(d.u.data, d.up.data) for d in draws if d.kind == "temporal"]
        i_pairs = [(d.u.data, d.up.data) for d in draws if d.kind == "instance"]
        vt = temporal_loss(r, rp, draws).item()
        vi = instance_loss(r, rp, draws).item()
        worst = max(worst, abs(vt - naive_temporal_loss(r.data, rp.data, t_pairs)))
        worst = max(worst, abs(vi - naive_instance_loss(r.data, rp.data, i_pairs)))
    ok = worst <= 1e-10
    return ok, f"max |vectorized - enumerated| = {worst:.3e} over {n_cases} cases"


def _suite_gradients(seed: int = 0) -> tuple[bool, str]:
    worst = 0.0
    for s in range(seed, seed + 3):
        for _, err in check_op_gradients(s):
            worst = max(worst, err)
    fn, leaves = full_loss_closure(seed)
    worst = max(worst, finite_difference_check(fn, leaves))
    ok = worst <= 1e-4
    return ok, f"max relative gradient error {worst:.3e}"


def _suite_crops(draws: int = 100_000, seed: int = 0) -> tuple[bool, str]:
    for T in (2, 3, 65):
        a1, a2, b1, b2 = sample_crop_pairs(T, draws, seed)
        ok = (0 <= a1).all() and (a1 <= a2).all() and (a2 < b1).all() \
            and (b1 <= b2).all() and (b2 <= T).all()
        if not ok:
            return False, f"crop invariant violated at T={T}"
    return True, f"crop invariant held for {draws} draws at T in (2, 3, 65)"


def run_selftest(verbose: bool = True) -> dict:
    """Run all suites; returns {suite: {passed, detail}} plus overall flag."""
    suites = {
        "dft_roundtrip": _suite_dft,
        "loss_bruteforce": _suite_loss_bruteforce,
        "gradient_checks": _suite_gradients,
        "crop_invariant": _suite_crops,
    }
    out: dict = {"passed": True, "suites": {}}
    for name, suite in suites.items():
        ok, detail = suite()
        out["suites"][name] = {"passed": ok, "detail": detail}
        out["passed"] = out["passed"] and ok
        if verbose:
            import sys
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", file=sys.stderr)
    return out
