"""Supervised training and evaluation over manifest-listed sample pairs."""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import s2vt
from .dsp import read_manifest, resolve_pair_paths
from .errors import ConfigError, DataError, NumericError
from .losses import (
    LossWeights,
    SsimConfig,
    format_report_row,
    hybrid_loss,
    psnr,
    ssim,
    REPORT_HEADER,
)
from .model import Model, ModelConfig
from .optim import AdamW, ScheduleConfig, lr_at, make_splits


def load_pairs(manifest, base_dir=".", subjects=None):
    """Load S2VT pairs into memory: [(subject_id, spec, vol), ...]."""
    resolved = resolve_pair_paths(manifest, base_dir)
    wanted = set(subjects) if subjects is not None else None
    out = []
    for sid, pairs in resolved.subjects:
        if wanted is not None and sid not in wanted:
            continue
        for spec_path, vol_path in pairs:
            out.append((sid, s2vt.read_tensor(spec_path), s2vt.read_tensor(vol_path)))
    if not out:
        raise DataError("no samples loaded for the requested subjects")
    return out


def check_geometry(manifest, mcfg):
    if tuple(manifest.geometry) != tuple(mcfg.geometry):
        raise ConfigError(
            f"manifest geometry {tuple(manifest.geometry)} does not match "
            f"model geometry {tuple(mcfg.geometry)}"
        )


def ssim_config_from(cfg):
    return SsimConfig(
        window=cfg.ssim_window,
        c1=cfg.ssim_c1,
        c2=cfg.ssim_c2,
        aggregation=cfg.ssim_aggregation,
    )


def _batch_grads(model, batch, weights, ssim_cfg, workers=1):
    """Accumulate mean-loss gradients over one batch; returns the mean loss."""

    def run_forward(sample):
        _sid, spec, vol = sample
        with ad.Tape() as tape:
            pred = model.forward(ad.Tensor(spec), train=True)
            loss = hybrid_loss(pred, ad.Tensor(vol), weights, ssim_cfg)
        return tape, loss

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_forward, batch))
    else:
        results = [run_forward(s) for s in batch]

    total = 0.0
    scale = 1.0 / len(batch)
    for tape, loss in results:  # backward serialized in submission order
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError("non-finite training loss")
        total += value * scale
        tape.backward(loss, seed=np.full_like(loss.data, scale))
    return total


def _clip_gradients(store, max_norm):
    total = 0.0
    for t in store.params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for t in store.params.values():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


def evaluate_samples(model, samples, ssim_cfg):
    """Per-subject SSIM/PSNR rows plus a pooled summary row."""
    by_subject = {}
    for sid, spec, vol in samples:
        pred = model.predict(spec)
        by_subject.setdefault(sid, ([], []))
        by_subject[sid][0].append(float(ssim(pred, vol, ssim_cfg).item()))
        by_subject[sid][1].append(psnr(pred, vol))
    rows = [
        format_report_row(sid, ssims, psnrs)
        for sid, (ssims, psnrs) in sorted(by_subject.items())
    ]
    all_ssims = [v for s, _ in by_subject.values() for v in s]
    all_psnrs = [v for _, p in by_subject.values() for v in p]
    rows.append(format_report_row("ALL", all_ssims, all_psnrs))
    return rows, float(np.mean(all_ssims)), all_psnrs


def split_for(cfg, manifest):
    plan = make_splits(
        manifest,
        mode=cfg.split_mode,
        k_train=cfg.k_train,
        k_test=cfg.k_test,
        seed=cfg.seed,
    )
    if not 0 <= cfg.fold < len(plan.folds):
        raise ConfigError(f"fold {cfg.fold} outside 0..{len(plan.folds) - 1}")
    return plan.folds[cfg.fold]


def train_run(cfg, manifest, base_dir, out_dir, log_name="train.log"):
    """Full training run: returns {'best_ssim', 'history', 'model', ...}.

    Deterministic for a fixed seed in single-worker mode. best.ckpt holds the
    highest held-out SSIM, last.ckpt the most recent completed epoch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mcfg = ModelConfig.from_run_config(cfg, geometry=manifest.geometry)
    check_geometry(manifest, mcfg)
    train_ids, test_ids = split_for(cfg, manifest)
    train_samples = load_pairs(manifest, base_dir, train_ids)
    test_samples = load_pairs(manifest, base_dir, test_ids)

    model = Model(mcfg, seed=cfg.seed)
    optimizer = AdamW(
        model.store.params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
    )
    schedule = ScheduleConfig(
        base_lr=cfg.lr,
        restart_period_epochs=cfg.restart_period,
        min_lr=cfg.min_lr,
        total_epochs=cfg.epochs,
    )
    weights = LossWeights(cfg.lambda1, cfg.lambda2)
    ssim_cfg = ssim_config_from(cfg)
    rng = np.random.default_rng(cfg.seed)

    log_path = out_dir / log_name
    log = open(log_path, "w")
    for key, value in sorted(cfg.items()):
        log.write(f"# {key} = {value}\n")
    log.write(f"# train_subjects = {' '.join(train_ids)}\n")
    log.write(f"# test_subjects = {' '.join(test_ids)}\n")
    if cfg.workers > 1:
        log.write("# determinism guaranteed only in single-worker mode\n")
    log.write("epoch, step, lr, loss, eval_ssim, eval_psnr\n")

    best_ssim = -math.inf
    history = []
    step = 0
    n = len(train_samples)
    batch = max(1, min(cfg.batch_size, n))
    steps_per_epoch = max(1, n // batch)
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for b in range(steps_per_epoch):
                lr = lr_at(epoch, b / steps_per_epoch, schedule)
                members = [train_samples[i] for i in order[b * batch : (b + 1) * batch]]
                model.store.zero_grad()
                loss = _batch_grads(model, members, weights, ssim_cfg, cfg.workers)
                if cfg.grad_clip > 0:
                    _clip_gradients(model.store, cfg.grad_clip)
                optimizer.step(lr=lr)
                epoch_losses.append(loss)
                step += 1
                log.write(f"{epoch}, {step}, {lr:.10g}, {loss:.10g}, -, -\n")
            _rows, eval_ssim, eval_psnrs = evaluate_samples(model, test_samples, ssim_cfg)
            finite = [p for p in eval_psnrs if math.isfinite(p)]
            eval_psnr = float(np.mean(finite)) if finite else math.inf
            log.write(
                f"{epoch}, {step}, {lr_at(epoch, 1.0 - 1e-12, schedule):.10g}, "
                f"{np.mean(epoch_losses):.10g}, {eval_ssim:.10g}, {eval_psnr:.10g}\n"
            )
            log.flush()
            history.append(
                {"epoch": epoch, "loss": float(np.mean(epoch_losses)),
                 "eval_ssim": eval_ssim, "eval_psnr": eval_psnr}
            )
            model.save(out_dir / "last.ckpt", extra={"epoch": str(epoch)})
            if eval_ssim > best_ssim:
                best_ssim = eval_ssim
                model.save(out_dir / "best.ckpt", extra={"epoch": str(epoch)})
    finally:
        log.close()
    return {
        "model": model,
        "best_ssim": best_ssim,
        "history": history,
        "train_subjects": train_ids,
        "test_subjects": test_ids,
        "log_path": log_path,
    }


def evaluate_run(cfg, manifest, base_dir, checkpoint_dir, out_path=None):
    """Evaluate a checkpoint on the configured test fold; returns report rows."""
    model = Model.from_checkpoint(checkpoint_dir, run_cfg=cfg, seed=cfg.seed)
    check_geometry(manifest, model.cfg)
    _train_ids, test_ids = split_for(cfg, manifest)
    samples = load_pairs(manifest, base_dir, test_ids)
    rows, _mean_ssim, _psnrs = evaluate_samples(model, samples, ssim_config_from(cfg))
    lines = [f"# checkpoint = {checkpoint_dir}", REPORT_HEADER] + rows
    if out_path is not None:
        Path(out_path).write_text("\n".join(lines) + "\n")
    return lines
