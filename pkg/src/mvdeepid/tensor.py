"""Differentiable primitives on dense float64 arrays.

All spatial ops use the ``(..., H, W, C)`` layout: any number of leading
batch axes, then height, width and channels.  Tensors are plain
``numpy.ndarray`` objects in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Raised when array shapes are inconsistent with an operation."""


@dataclass
class LayerGrads:
    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> int:
    if x.ndim < 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d: bad ranks, input {x.shape}, weights {w.shape}, bias {b.shape}")
    k = w.shape[0]
    if w.shape[1] != k:
        raise ShapeError(f"conv2d: weights {w.shape} must be square k x k x Ci x Co")
    if x.shape[-1] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[-1]} channels, weights {w.shape} expect {w.shape[2]}")
    if b.shape[0] != w.shape[3]:
        raise ShapeError(f"conv2d: bias {b.shape} does not match weights {w.shape}")
    if k > min(x.shape[-3], x.shape[-2]):
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    return k


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Patches of ``x`` as rows: (..., Hi, Wi, Ci) -> (..., Ho, Wo, k*k*Ci),
    ordered (dy, dx, c) to match a reshaped ``(k, k, Ci, Co)`` kernel."""
    ho, wo, ci = x.shape[-3] - k + 1, x.shape[-2] - k + 1, x.shape[-1]
    sh, sw, sc = x.strides[-3:]
    win = as_strided(x, x.shape[:-3] + (ho, wo, k, k, ci), x.strides[:-3] + (sh, sw, sh, sw, sc),
                     writeable=False)
    return win.reshape(x.shape[:-3] + (ho, wo, k * k * ci))


def conv2d_forward(x, w, b, cols: np.ndarray | None = None) -> np.ndarray:
    """Valid (unpadded), stride-1 cross-correlation.

    ``x``: (..., Hi, Wi, Ci), ``w``: (k, k, Ci, Co), ``b``: (Co,)
    -> (..., Hi-k+1, Wi-k+1, Co).  ``cols`` may pass a precomputed
    ``im2col(x, k)``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k = _check_conv(x, w, b)
    if cols is None:
        cols = im2col(np.ascontiguousarray(x), k)
    return cols @ w.reshape(-1, w.shape[3]) + b


def conv2d_backward(x, w, grad_out, cols: np.ndarray | None = None,
                    need_input_grad: bool = True) -> LayerGrads:
    """Gradients of ``conv2d_forward`` contracted with ``grad_out``.

    With ``need_input_grad`` false the input gradient is returned as None.
    """
    x, w, g = as_tensor(x), as_tensor(w), as_tensor(grad_out)
    k = _check_conv(x, w, np.zeros(w.shape[3]))
    ho, wo = x.shape[-3] - k + 1, x.shape[-2] - k + 1
    co = w.shape[3]
    expected = x.shape[:-3] + (ho, wo, co)
    if g.shape != expected:
        raise ShapeError(f"conv2d_backward: output grad {g.shape} does not match forward output {expected}")
    if cols is None:
        cols = im2col(np.ascontiguousarray(x), k)
    g2 = g.reshape(-1, co)
    gw = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)

    gx = None
    if need_input_grad:
        gcols = (g2 @ w.reshape(-1, co).T).reshape(x.shape[:-3] + (ho, wo, k, k, x.shape[-1]))
        gx = np.zeros_like(x)
        for dy in range(k):
            for dx in range(k):
                gx[..., dy:dy + ho, dx:dx + wo, :] += gcols[..., dy, dx, :]
    return LayerGrads(gx, {"w": gw, "b": gb})


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------

def _quadrants(x):
    return (x[..., 0::2, 0::2, :], x[..., 0::2, 1::2, :], x[..., 1::2, 0::2, :], x[..., 1::2, 1::2, :])


def maxpool2(x) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling with stride 2.

    Returns the pooled tensor and, per window, the row-major index (0..3)
    of the winning cell.  Ties go to the first maximal cell.
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"maxpool2: need (..., H, W, C), got {x.shape}")
    if x.shape[-3] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"maxpool2: H and W must be even, got {x.shape}")
    quads = _quadrants(x)
    best = quads[0].copy()
    idx = np.zeros(best.shape, dtype=np.int8)
    for j in (1, 2, 3):
        better = quads[j] > best
        idx[better] = j
        np.maximum(best, quads[j], out=best)
    return best, idx


def maxpool2_backward(grad_out, argmax: np.ndarray) -> np.ndarray:
    g = as_tensor(grad_out)
    if g.shape != argmax.shape:
        raise ShapeError(f"maxpool2_backward: grad {g.shape} vs argmax {argmax.shape}")
    out = np.zeros(g.shape[:-3] + (2 * g.shape[-3], 2 * g.shape[-2], g.shape[-1]))
    for j, q in enumerate(_quadrants(out)):
        q[...] = np.where(argmax == j, g, 0.0)
    return out


# --------------------------------------------------------------------------
# elementwise / dense
# --------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    x, g = as_tensor(x), as_tensor(grad_out)
    if x.shape != g.shape:
        raise ShapeError(f"relu_backward: input {x.shape} vs grad {g.shape}")
    return np.where(x > 0, g, 0.0)


def fc_forward(x, w, b) -> np.ndarray:
    """``y = W x + b`` for ``x`` of shape (..., d), ``W`` (m, d), ``b`` (m,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or b.shape != (w.shape[0],) or x.shape[-1:] != (w.shape[1],):
        raise ShapeError(f"fc: input {x.shape}, weights {w.shape}, bias {b.shape} disagree")
    return x @ w.T + b


def fc_backward(x, w, grad_out) -> LayerGrads:
    x, w, g = as_tensor(x), as_tensor(w), as_tensor(grad_out)
    if g.shape != x.shape[:-1] + (w.shape[0],):
        raise ShapeError(f"fc_backward: grad {g.shape} vs input {x.shape}, weights {w.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return LayerGrads(g @ w, {"w": g2.T @ x2, "b": g2.sum(axis=0)})


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(logits, label) -> tuple[np.ndarray, float | np.ndarray]:
    """Softmax probabilities and negative log-likelihood of ``label``.

    Batched logits (..., C) take an integer array of labels of shape (...).
    """
    z = as_tensor(logits)
    num_classes = z.shape[-1]
    lab = np.asarray(label)
    if lab.shape != z.shape[:-1]:
        raise ShapeError(f"softmax_nll: labels {lab.shape} vs logits {z.shape}")
    if np.any(lab < 0) or np.any(lab >= num_classes):
        raise ValueError(f"softmax_nll: label {label} outside [0, {num_classes})")
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    probs = np.exp(shifted - lse[..., None])
    picked = np.take_along_axis(shifted, lab[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = lse - picked
    if loss.ndim == 0:
        loss = float(loss)
    return probs, loss


def softmax_nll_backward(probs, label) -> np.ndarray:
    """Gradient of the NLL w.r.t. the logits: ``probs - onehot(label)``."""
    p = as_tensor(probs)
    lab = np.asarray(label, dtype=np.intp)
    onehot = np.arange(p.shape[-1]) == lab[..., None]
    return p - onehot


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------

def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def _probe(loss_fn, kink_aware):
    out = loss_fn()
    return out if kink_aware else (out, None)


def numeric_grad(loss_fn: Callable, x: np.ndarray, eps: float = 1e-5,
                 coords: np.ndarray | None = None, kink_aware: bool = False
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. ``x``, perturbed in place.

    Returns the full-shaped gradient (NaN outside ``coords``, flat indices)
    and a boolean mask of coordinates whose two probes straddle a kink.
    With ``kink_aware`` set, ``loss_fn`` returns ``(value, signature)``
    where the signature identifies the piecewise-linear region (which
    ReLUs are on, which pooling cell won); probes with differing signatures
    are flagged.
    """
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise ValueError("numeric_grad needs a contiguous array to perturb in place")
    if coords is None:
        coords = np.arange(flat.size)
    out = np.full(flat.size, np.nan)
    kinked = np.zeros(flat.size, dtype=bool)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        up, sig_up = _probe(loss_fn, kink_aware)
        flat[i] = orig - eps
        down, sig_down = _probe(loss_fn, kink_aware)
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
        kinked[i] = sig_up != sig_down
    return out.reshape(x.shape), kinked.reshape(x.shape)


def grad_check(loss_fn: Callable, analytic: Mapping[str, np.ndarray],
               tensors: Mapping[str, np.ndarray], eps: float = 1e-5,
               sample: int | None = None, seed: int = 0,
               detail: dict | None = None, kink_aware: bool = False) -> float:
    """Max relative error between analytic gradients and central differences.

    ``tensors`` are the live arrays ``loss_fn`` reads (parameters and/or
    inputs); each is perturbed in place and restored.  ``analytic`` maps the
    same names to their analytic gradients.  With ``sample`` set, only that
    many randomly chosen coordinates per tensor are checked.

    With ``kink_aware`` (see ``numeric_grad``) coordinates whose probes
    cross a kink are left out of the maximum, since a difference quotient
    across a non-differentiable point does not estimate the gradient.  If
    ``detail`` is given it receives the worst tensor name, the number of
    coordinates checked and skipped, and the unfiltered maximum.
    """
    rng = np.random.default_rng(seed)
    worst, worst_name, raw_worst = 0.0, None, 0.0
    checked = skipped = 0
    for name, arr in tensors.items():
        if analytic[name].shape != arr.shape:
            raise ShapeError(f"grad_check: {name} grad {analytic[name].shape} vs param {arr.shape}")
        coords = None
        if sample is not None and sample < arr.size:
            coords = np.sort(rng.choice(arr.size, size=sample, replace=False))
        num, kinked = numeric_grad(loss_fn, arr, eps, coords, kink_aware)
        num, kinked = num.reshape(-1), kinked.reshape(-1)
        ana = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        mask = ~np.isnan(num)
        errs = relative_error(ana[mask], num[mask])
        raw_worst = max(raw_worst, float(errs.max(initial=0.0)))
        smooth = errs[~kinked[mask]]
        checked += int(mask.sum())
        skipped += int(mask.sum() - smooth.size)
        err = float(smooth.max(initial=0.0))
        if err > worst:
            worst, worst_name = err, name
    if detail is not None:
        detail.update(worst=worst_name, checked=checked, skipped=skipped, unfiltered=raw_worst)
    return worst
