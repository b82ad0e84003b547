"""Training loop: AdamW over tape gradients, spatial + frequency loss.

Batches are accumulated one sample at a time; each sample's loss is
scaled by 1/B before backward so leaf gradients sum to the batch mean.
All randomness flows through generators seeded from the config.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import sh, wavelet
from .core import GradientTable, Volume4D, extract_slice_triples, make_coord_grid
from .errors import ConfigurationError, DataError
from .model import SuperResolver
from .sampling import QSubset, check_scale, downsample_x, select_subset, zero_fill


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    steps_per_epoch: int = 1
    batch_size: int = 4
    patch_hr: int = 32
    scale_range: tuple = (2.0, 3.0)
    q_counts: tuple = ()  # empty = one scenario with n_dirs // 3
    lr_initial: float = 1e-4
    lr_after: float = 1e-5
    lr_switch_epoch: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    lambda_d: float = 0.1
    wavelet_levels: int = 3
    val_fraction: float = 0.25
    val_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs, steps_per_epoch, batch_size must be >= 1")
        lo, hi = self.scale_range
        check_scale(lo)
        check_scale(hi)
        if lo > hi:
            raise ConfigurationError(f"scale_range {self.scale_range} is inverted")
        if self.lambda_d < 0:
            raise ConfigurationError(f"lambda_d must be >= 0, got {self.lambda_d}")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in (0, 1)")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial if epoch < cfg.lr_switch_epoch else cfg.lr_after


class AdamW:
    """Decoupled weight decay; decay is applied to the parameter directly,
    never through the moment estimates."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.values) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.values) for n, p in params.items()}

    def step(self, lr: float):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.values = (
                p.values
                - lr * m_hat / (np.sqrt(v_hat) + c.eps)
                - lr * c.weight_decay * p.values
            )


def sample_loss(coeffs, target_mid, basis_t, lambda_d, levels):
    """Combined loss of one sample.

    coeffs : DTensor (P, R); target_mid : ndarray (h2, w2, N2);
    basis_t : ndarray (R, N2). Returns (loss, recon, detail) DTensors,
    recon a mean absolute error over all N2 directions of the middle
    slice, detail a band-weighted mean absolute error of wavelet detail
    coefficients averaged over directions.
    """
    h2, w2, n2 = target_mid.shape
    pred = ad.matmul(coeffs, ad.DTensor(basis_t))
    pred = ad.transpose(ad.reshape(pred, (h2, w2, n2)), (2, 0, 1))
    target = np.transpose(target_mid, (2, 0, 1))
    diff = ad.sub(pred, ad.DTensor(target))
    recon = ad.scale(ad.l1_loss(diff), 1.0 / diff.values.size)
    if lambda_d == 0.0:
        return recon, recon, ad.DTensor(0.0)
    weights = wavelet.band_weights((h2, w2), levels)
    det_p = ad.scale(ad.wavelet_details(pred, levels), weights)
    det_t = wavelet.detail_vector(target, levels) * weights
    detail = ad.scale(ad.l1_loss(ad.sub(det_p, ad.DTensor(det_t))), 1.0 / n2)
    loss = ad.add(recon, ad.scale(detail, lambda_d))
    return loss, recon, detail


@dataclass
class TrainRecord:
    epoch_loss: list = field(default_factory=list)
    epoch_recon: list = field(default_factory=list)
    epoch_detail: list = field(default_factory=list)
    val_psnr: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_psnr: float = -np.inf

    def as_dict(self):
        return {
            "epoch_loss": self.epoch_loss,
            "epoch_recon": self.epoch_recon,
            "epoch_detail": self.epoch_detail,
            "val_psnr": self.val_psnr,
            "step_loss": self.step_loss,
            "epoch_seconds": self.epoch_seconds,
            "best_epoch": self.best_epoch,
            "best_val_psnr": self.best_val_psnr,
        }


@dataclass(frozen=True)
class TrainData:
    triples: tuple  # of (H, W, 3, N2) arrays
    table: GradientTable  # DWI-only reference table
    train_idx: tuple
    val_idx: tuple


def split_triples(vol: Volume4D, table: GradientTable, val_fraction: float) -> TrainData:
    """Deterministic split: validation triples sit evenly spaced in the
    interior of the slice range, the rest train."""
    if table.b0_mask.any():
        raise DataError("expected a DWI-only table (normalize first)")
    triples = tuple(t.vol.data for t in extract_slice_triples(vol))
    n = len(triples)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise DataError(f"{n} triples cannot hold out {n_val} for validation")
    marks = np.round(np.linspace(0, n - 1, n_val + 2))[1:-1].astype(int)
    val_idx = tuple(sorted(set(int(i) for i in marks)))
    train_idx = tuple(i for i in range(n) if i not in val_idx)
    return TrainData(triples, table, train_idx, val_idx)


def _resolve_q_counts(cfg: TrainConfig, n_dirs: int) -> tuple:
    counts = cfg.q_counts if cfg.q_counts else (max(1, n_dirs // 3),)
    for k in counts:
        if not 1 <= k <= n_dirs:
            raise ConfigurationError(f"subset size {k} out of range for {n_dirs} dirs")
    return counts


def _degrade_triple(hr: np.ndarray, s: float, q: QSubset, spacing) -> np.ndarray:
    sub = Volume4D(np.ascontiguousarray(hr[:, :, :, q.indices]), spacing)
    return downsample_x(sub, s).data


def validate(model: SuperResolver, data: TrainData, cfg: TrainConfig, basis_full_t) -> float:
    """Mean PSNR over held-out triples at the fixed validation scenario."""
    from .metrics import psnr

    counts = _resolve_q_counts(cfg, len(data.table))
    q = select_subset(data.table, counts[0])
    vals = []
    for ti in data.val_idx:
        hr = data.triples[ti]
        h2, w2 = hr.shape[0], hr.shape[1]
        i_lr = _degrade_triple(hr, cfg.val_scale, q, (1.0, 1.0, 1.0))
        coeffs, _ = model.forward(i_lr, cfg.val_scale, q, data.table, make_coord_grid(h2, w2))
        pred = (coeffs.values @ basis_full_t).reshape(h2, w2, -1)
        target = hr[:, :, 1, :]
        vals.extend(psnr(pred[:, :, d], target[:, :, d]) for d in range(target.shape[2]))
    return float(np.mean(vals))


def train_loop(model: SuperResolver, data: TrainData, cfg: TrainConfig, log=None):
    """Run the full schedule, return (record, best_weights).

    The best weights are a snapshot of the epoch with the highest
    validation PSNR; the model itself ends at the last step.
    """
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    params = model.parameters()
    opt = AdamW(params, cfg)
    record = TrainRecord()
    counts = _resolve_q_counts(cfg, len(data.table))
    subsets = {k: select_subset(data.table, k) for k in counts}
    basis_full_t = sh.eval_basis(data.table.dirs, model.cfg.sh_order).T
    best_weights = model.export_weights()

    was_guarded = ad.set_nan_guard(True)
    try:
        for epoch in range(cfg.epochs):
            t0 = time.monotonic()
            lr = lr_schedule(epoch, cfg)
            ep_loss, ep_recon, ep_detail = [], [], []
            for _ in range(cfg.steps_per_epoch):
                batch_loss = batch_recon = batch_detail = 0.0
                for _ in range(cfg.batch_size):
                    ti = int(rng.choice(len(data.train_idx)))
                    hr = data.triples[data.train_idx[ti]]
                    s = float(rng.uniform(*cfg.scale_range))
                    q = subsets[counts[int(rng.integers(len(counts)))]]
                    ph = min(cfg.patch_hr, hr.shape[0])
                    pw = min(cfg.patch_hr, hr.shape[1])
                    top = int(rng.integers(hr.shape[0] - ph + 1))
                    left = int(rng.integers(hr.shape[1] - pw + 1))
                    patch = hr[top : top + ph, left : left + pw]
                    i_lr = _degrade_triple(patch, s, q, (1.0, 1.0, 1.0))
                    with ad.Tape() as tape:
                        coeffs, _ = model.forward(
                            i_lr, s, q, data.table, make_coord_grid(ph, pw)
                        )
                        loss, recon, detail = sample_loss(
                            coeffs, patch[:, :, 1, :], basis_full_t,
                            cfg.lambda_d, cfg.wavelet_levels,
                        )
                        tape.backward(ad.scale(loss, 1.0 / cfg.batch_size))
                    batch_loss += float(loss.values) / cfg.batch_size
                    batch_recon += float(recon.values) / cfg.batch_size
                    batch_detail += float(detail.values) / cfg.batch_size
                opt.step(lr)
                ad.zero_grads(params)
                record.step_loss.append(batch_loss)
                ep_loss.append(batch_loss)
                ep_recon.append(batch_recon)
                ep_detail.append(batch_detail)
            record.epoch_loss.append(float(np.mean(ep_loss)))
            record.epoch_recon.append(float(np.mean(ep_recon)))
            record.epoch_detail.append(float(np.mean(ep_detail)))
            vp = validate(model, data, cfg, basis_full_t)
            record.val_psnr.append(vp)
            if vp > record.best_val_psnr:
                record.best_val_psnr = vp
                record.best_epoch = epoch
                best_weights = model.export_weights()
            record.epoch_seconds.append(time.monotonic() - t0)
            if log is not None:
                log(
                    f"epoch {epoch + 1}/{cfg.epochs} lr {lr:.1e} "
                    f"loss {record.epoch_loss[-1]:.6f} val_psnr {vp:.3f}"
                )
    finally:
        ad.set_nan_guard(was_guarded)
    return record, best_weights


def zero_fill_baseline(i_lr: np.ndarray, h2: int, w2: int) -> np.ndarray:
    """Zero-filled middle slice of an LR triple, (h2, w2, N1)."""
    vol = Volume4D(np.ascontiguousarray(i_lr), (1.0, 1.0, 1.0))
    return zero_fill(vol, (h2, w2)).data[:, :, 1, :]


def sh_fit_baseline(
    i_lr: np.ndarray, h2: int, w2: int, q: QSubset, table: GradientTable,
    order: int, lb_lambda: float = 0.006,
) -> np.ndarray:
    """Zero-fill then per-voxel regularized SH fit on the sampled
    directions, synthesized at all table directions, (h2, w2, N2)."""
    zf = zero_fill_baseline(i_lr, h2, w2)
    basis_q = sh.eval_basis(table.dirs[q.indices], order)
    coeffs = sh.fit_sh(zf, basis_q, lb_lambda=lb_lambda)
    return sh.synth_sh(coeffs, sh.eval_basis(table.dirs, order))
