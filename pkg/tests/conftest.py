"""Shared oracles and gradient-check helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from eeg2vol import autodiff as ad
from eeg2vol.model import Model, ModelConfig

GRAD_TOL = 1e-4
FD_STEP = 1e-5


def rel_err(a, b, floor=1e-6):
    """Relative error with an absolute floor, elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def analytic_grads(func, leaves):
    """Run func() under a fresh tape; return (grads per leaf, scalar value)."""
    for t in leaves:
        t.grad = None
    with ad.Tape():
        out = func()
        out.backward()
    grads = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in leaves
    ]
    for t in leaves:
        t.grad = None
    return grads, out.item()


def fd_grad_check(func, leaves, h=FD_STEP, tol=GRAD_TOL):
    """Per-coordinate central finite differences against the analytic grads."""
    grads, _ = analytic_grads(func, leaves)
    worst = 0.0
    for t, g in zip(leaves, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = func().item()
            flat[i] = orig - h
            fm = func().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = float(rel_err(fd, gflat[i]))
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch at coordinate {i}: fd={fd:.8g} "
                f"analytic={gflat[i]:.8g} rel={err:.3g}"
            )
    return worst


def directional_grad_check(
    func, named_leaves, rng, steps=(1e-5, 1e-6, 3e-7, 1e-7), tol=GRAD_TOL
):
    """Per-tensor directional derivative check with an adaptive step.

    Large higher-order curvature (e.g. through exp/scan chains) contaminates
    fixed-step coordinate differences even when the analytic gradient is
    correct; a directional probe re-checked at shrinking steps separates
    truncation error from genuine gradient bugs.
    """
    leaves = [t for _name, t in named_leaves]
    grads, _ = analytic_grads(func, leaves)
    failures = []
    for (name, t), g in zip(named_leaves, grads):
        direction = rng.standard_normal(t.data.shape)
        direction /= np.linalg.norm(direction.reshape(-1)) or 1.0
        analytic = float(np.sum(g * direction))
        best = np.inf
        for h in steps:
            t.data = t.data + h * direction
            fp = func().item()
            t.data = t.data - 2.0 * h * direction
            fm = func().item()
            t.data = t.data + h * direction
            fd = (fp - fm) / (2.0 * h)
            best = min(best, float(rel_err(fd, analytic)))
            if best < tol:
                break
        if best >= tol:
            failures.append((name, best))
    assert not failures, f"directional gradient failures: {failures}"


# ---------------------------------------------------------------------------
# independent numpy oracles
# ---------------------------------------------------------------------------

def conv2d_oracle(x, kernel, stride=(1, 1), padding=(0, 0)):
    """Quadruple-loop cross-correlation reference."""
    sh, sw = stride
    ph, pw = padding
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    hout = (h + 2 * ph - kh) // sh + 1
    wout = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, hout, wout))
    for b in range(n):
        for oc in range(o):
            for i in range(hout):
                for j in range(wout):
                    patch = xp[b, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[b, oc, i, j] = np.sum(patch * kernel[oc])
    return out


def dft_oracle(frame):
    """O(n^2) one-sided magnitude DFT of a single real frame."""
    n = len(frame)
    t = np.arange(n)
    mags = []
    for k in range(n // 2 + 1):
        re = np.sum(frame * np.cos(-2.0 * np.pi * k * t / n))
        im = np.sum(frame * np.sin(-2.0 * np.pi * k * t / n))
        mags.append(np.hypot(re, im))
    return np.array(mags)


def matmul_oracle(a, b):
    """Triple-loop matrix product reference."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


# ---------------------------------------------------------------------------
# micro model
# ---------------------------------------------------------------------------

MICRO_GEOMETRY = (4, 5, 6, 3, 8, 8)  # (C, T, F, D, H, W)


def micro_model_config(scan_mode="sequential"):
    return ModelConfig(
        geometry=MICRO_GEOMETRY,
        embed=4,
        heads=2,
        enc_stages=2,
        vss_blocks=1,
        state_dim=2,
        scan_mode=scan_mode,
    )


@pytest.fixture
def micro_model():
    return Model(micro_model_config(), seed=0)
