"""Single-view baseline, MV-DeepID and M2 DeepID classifiers.

Every model is a set of view-specific backbones whose top features are
aggregated, fed through one ReLU hidden layer (160 units) and a softmax
head.  The baseline is the one-view (center) case.  M2 additionally feeds
each view's layer-3 output into the aggregate.

Samples are mappings from view label to an image of shape (55, 47, 3), or a
batch (B, 55, 47, 3), with pixel values in [0, 1].  The models map pixels to
[-1, 1] before the backbone.  Batched losses and gradients are batch means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Mapping

import numpy as np

from .backbone import (
    LAYERS,
    WIDTHS,
    BackboneActivations,
    BackboneParams,
    backbone_backward,
    backbone_forward,
    glorot_bound,
    init_backbone,
    layer_shapes,
)
from .tensor import (
    ShapeError,
    as_tensor,
    fc_backward,
    fc_forward,
    grad_check,
    relu,
    relu_backward,
    softmax_nll,
    softmax_nll_backward,
)

HIDDEN = 160
DEFAULT_LR = 1e-4


@dataclass(frozen=True)
class AggregationSpec:
    n: int
    h: int
    w: int
    depth: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need at least one view, got N={self.n}")

    @property
    def d(self) -> int:
        return (self.n * self.h) * self.w * self.depth


def aggregate_views(features) -> np.ndarray:
    """Stack per-view (..., H, W, D) tensors along the height axis."""
    feats = [as_tensor(f) for f in features]
    if not feats:
        raise ValueError("aggregate_views needs at least one view")
    first = feats[0].shape
    for i, f in enumerate(feats):
        if f.shape != first or f.ndim < 3:
            raise ShapeError(f"view {i} has shape {f.shape}, view 0 has {first}")
    return np.concatenate(feats, axis=-3)


def aggregate_multilevel(per_view, widths=WIDTHS) -> np.ndarray:
    """Concatenate, per view, flattened layer3 then layer4; views in order."""
    shapes = layer_shapes(widths)
    blocks = []
    for i, (l3, l4) in enumerate(per_view):
        l3, l4 = as_tensor(l3), as_tensor(l4)
        if l3.shape[-3:] != shapes[2] or l4.shape[-3:] != shapes[3] or l3.shape[:-3] != l4.shape[:-3]:
            raise ShapeError(f"view {i}: layer3 {l3.shape} / layer4 {l4.shape}, expected {shapes[2]} / {shapes[3]}")
        lead = l3.shape[:-3]
        blocks.append(l3.reshape(lead + (-1,)))
        blocks.append(l4.reshape(lead + (-1,)))
    if not blocks:
        raise ValueError("aggregate_multilevel needs at least one view")
    return np.concatenate(blocks, axis=-1)


def _glorot(rng, fan_out, fan_in):
    bound = glorot_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class MvModel:
    """Layer-4 aggregation model.  ``subnets[i]`` processes ``view_order[i]``."""

    kind: ClassVar[str] = "mv"

    view_order: tuple[str, ...]
    subnets: list[BackboneParams]
    fc_w: np.ndarray
    fc_b: np.ndarray
    sm_w: np.ndarray
    sm_b: np.ndarray
    freeze_conv: bool = False
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.view_order = tuple(self.view_order)
        if len(self.subnets) != len(self.view_order) or not self.subnets:
            raise ShapeError(f"{len(self.subnets)} subnets for views {self.view_order}")
        if len(set(self.view_order)) != len(self.view_order):
            raise ValueError(f"duplicate views in {self.view_order}")
        widths = {s.widths for s in self.subnets}
        if len(widths) != 1:
            raise ShapeError(f"subnets disagree on widths: {widths}")
        hidden = self.fc_w.shape[0]
        if self.fc_w.shape != (hidden, self.feature_dim) or self.fc_b.shape != (hidden,):
            raise ShapeError(f"fc weights {self.fc_w.shape} / bias {self.fc_b.shape}, "
                             f"expected ({hidden}, {self.feature_dim})")
        if self.sm_w.ndim != 2 or self.sm_w.shape[1] != hidden or self.sm_b.shape != (self.sm_w.shape[0],):
            raise ShapeError(f"softmax weights {self.sm_w.shape} / bias {self.sm_b.shape} vs hidden {hidden}")

    @property
    def widths(self) -> tuple[int, ...]:
        return self.subnets[0].widths

    @property
    def num_classes(self) -> int:
        return self.sm_w.shape[0]

    @property
    def hidden(self) -> int:
        return self.fc_w.shape[0]

    @property
    def aggregation(self) -> AggregationSpec:
        h, w, depth = layer_shapes(self.widths)[3]
        return AggregationSpec(len(self.view_order), h, w, depth)

    @classmethod
    def dim_for(cls, n_views: int, widths=WIDTHS) -> int:
        h, w, depth = layer_shapes(widths)[3]
        return AggregationSpec(n_views, h, w, depth).d

    @property
    def feature_dim(self) -> int:
        return self.dim_for(len(self.view_order), self.widths)

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for view, sub in zip(self.view_order, self.subnets):
            for name, arr in sub.named().items():
                out[f"{view}.{name}"] = arr
        out.update({"fc.w": self.fc_w, "fc.b": self.fc_b, "sm.w": self.sm_w, "sm.b": self.sm_b})
        return out

    def features(self, acts: list[BackboneActivations]) -> np.ndarray:
        agg = aggregate_views([a.layer4 for a in acts])
        return agg.reshape(agg.shape[:-3] + (-1,))

    def feature_grads(self, grad: np.ndarray, acts: list[BackboneActivations]):
        """Split the aggregate gradient into per-view (layer4, layer3) grads."""
        h, w, depth = layer_shapes(self.widths)[3]
        g = grad.reshape(grad.shape[:-1] + (len(self.view_order) * h, w, depth))
        return [(g[..., i * h:(i + 1) * h, :, :], None) for i in range(len(self.view_order))]


class M2Model(MvModel):
    """Multi-level aggregation: each view contributes layer3 and layer4."""

    kind: ClassVar[str] = "m2"

    @classmethod
    def dim_for(cls, n_views, widths=WIDTHS):
        s3, s4 = layer_shapes(widths)[2:]
        return n_views * (int(np.prod(s3)) + int(np.prod(s4)))

    def features(self, acts):
        return aggregate_multilevel([(a.layer3, a.layer4) for a in acts], self.widths)

    def feature_grads(self, grad, acts):
        s3, s4 = layer_shapes(self.widths)[2:]
        n3, n4 = int(np.prod(s3)), int(np.prod(s4))
        lead = grad.shape[:-1]
        out = []
        for i in range(len(self.view_order)):
            block = grad[..., i * (n3 + n4):(i + 1) * (n3 + n4)]
            out.append((block[..., n3:].reshape(lead + s4), block[..., :n3].reshape(lead + s3)))
        return out


class BaselineModel(MvModel):
    """The single-view DeepID classifier on center crops."""

    kind: ClassVar[str] = "baseline"


MODEL_KINDS: dict[str, type[MvModel]] = {"baseline": BaselineModel, "mv": MvModel, "m2": M2Model}


def init_model(kind: str, view_order=("L", "C", "R"), num_classes: int = 504, seed=0,
               widths=WIDTHS, hidden: int = HIDDEN) -> MvModel:
    """Fresh model: Glorot-uniform weights, zero biases.

    A baseline always uses the single view ``("C",)``.
    """
    cls = MODEL_KINDS[kind]
    if kind == "baseline":
        view_order = ("C",)
    view_order = tuple(view_order)
    ss = np.random.SeedSequence(seed)
    conv_seeds = ss.spawn(len(view_order))
    head_rng = np.random.default_rng(ss.spawn(1)[0])
    subnets = [init_backbone(s, widths) for s in conv_seeds]
    d = cls.dim_for(len(view_order), widths)
    return cls(
        view_order=view_order,
        subnets=subnets,
        fc_w=_glorot(head_rng, hidden, d),
        fc_b=np.zeros(hidden),
        sm_w=_glorot(head_rng, num_classes, hidden),
        sm_b=np.zeros(num_classes),
    )


def zero_model(kind: str, view_order=("L", "C", "R"), num_classes: int = 504, widths=WIDTHS,
               hidden: int = HIDDEN) -> MvModel:
    model = init_model(kind, view_order, num_classes, 0, widths, hidden)
    for arr in model.named_params().values():
        arr[...] = 0.0
    return model


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

@dataclass
class ForwardCache:
    kind: str
    view_order: tuple[str, ...]
    version: int
    batched: bool
    acts: list[BackboneActivations]
    features: np.ndarray
    fc_pre: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def model_input(image) -> np.ndarray:
    """Pixel values [0, 1] -> [-1, 1]."""
    return 2.0 * as_tensor(image) - 1.0


def _gather(sample: Mapping[str, np.ndarray], model: MvModel) -> tuple[list[np.ndarray], bool]:
    images = []
    for view in model.view_order:
        if view not in sample:
            raise KeyError(f"sample is missing view {view!r} required by {model.kind} model "
                           f"with views {model.view_order}")
        images.append(model_input(sample[view]))
    batched = images[0].ndim == 4
    if any(im.shape != images[0].shape for im in images):
        raise ShapeError(f"views have differing shapes {[im.shape for im in images]}")
    if not batched:
        images = [im[None] for im in images]
    return images, batched


def forward(model: MvModel, sample: Mapping[str, np.ndarray]) -> tuple[np.ndarray, ForwardCache]:
    images, batched = _gather(sample, model)
    acts = [backbone_forward(im, sub) for im, sub in zip(images, model.subnets)]
    feats = model.features(acts)
    fc_pre = fc_forward(feats, model.fc_w, model.fc_b)
    hid = relu(fc_pre)
    logits = fc_forward(hid, model.sm_w, model.sm_b)
    probs, _ = softmax_nll(logits, np.zeros(logits.shape[:-1], dtype=np.intp))
    cache = ForwardCache(model.kind, model.view_order, model.version, batched,
                         acts, feats, fc_pre, hid, probs)
    return (probs if batched else probs[0]), cache


def mv_forward(sample, model: MvModel):
    if not isinstance(model, MvModel) or isinstance(model, M2Model):
        raise TypeError(f"mv_forward needs an MvModel, got {type(model).__name__}")
    return forward(model, sample)


def m2_forward(sample, model: M2Model):
    if not isinstance(model, M2Model):
        raise TypeError(f"m2_forward needs an M2Model, got {type(model).__name__}")
    return forward(model, sample)


def baseline_forward(image, model: MvModel) -> np.ndarray:
    if model.view_order != ("C",):
        raise ValueError(f"baseline model must have the single view ('C',), got {model.view_order}")
    return forward(model, {"C": image})[0]


def loss(model: MvModel, sample, label) -> float:
    """Mean NLL of ``label`` under the model."""
    probs, cache = forward(model, sample)
    lab = np.asarray(label).reshape(-1)
    p = cache.probs[np.arange(len(lab)), lab]
    return float(np.mean(-np.log(p)))


def model_backward(model: MvModel, cache: ForwardCache, label) -> dict[str, np.ndarray]:
    """Exact gradients of the (batch-mean) NLL for every parameter.

    Keys match ``model.named_params()``.
    """
    if cache.kind != model.kind or cache.view_order != model.view_order or cache.version != model.version:
        raise ValueError(f"stale or mismatched cache: cache ({cache.kind}, {cache.view_order}, v{cache.version}) "
                         f"vs model ({model.kind}, {model.view_order}, v{model.version})")
    lab = np.asarray(label, dtype=np.intp).reshape(-1)
    b = cache.probs.shape[0]
    if lab.shape != (b,):
        raise ShapeError(f"{lab.shape[0]} labels for a batch of {b}")
    dlogits = softmax_nll_backward(cache.probs, lab) / b

    sm = fc_backward(cache.hidden, model.sm_w, dlogits)
    dpre = relu_backward(cache.fc_pre, sm.input_grad)
    fc = fc_backward(cache.features, model.fc_w, dpre)

    grads: dict[str, np.ndarray] = {}
    per_view = model.feature_grads(fc.input_grad, cache.acts)
    for view, sub, acts, (g4, g3) in zip(model.view_order, model.subnets, cache.acts, per_view):
        conv, _ = backbone_backward(acts, sub, g4, g3, need_input_grad=False)
        for name, g in conv.items():
            grads[f"{view}.{name}"] = g
    grads.update({"fc.w": fc.param_grads["w"], "fc.b": fc.param_grads["b"],
                  "sm.w": sm.param_grads["w"], "sm.b": sm.param_grads["b"]})
    return grads


def is_conv_param(name: str) -> bool:
    return name.split(".")[1] in LAYERS if name.count(".") == 2 else False


def sgd_step(model: MvModel, grads: Mapping[str, np.ndarray], lr: float = DEFAULT_LR) -> MvModel:
    """In-place ``theta -= lr * g``; conv parameters are skipped when frozen."""
    params = model.named_params()
    if set(grads) != set(params):
        raise ShapeError(f"gradient names do not match parameters: {sorted(set(grads) ^ set(params))}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"{name}: grad {grads[name].shape} vs param {p.shape}")
    for name, p in params.items():
        if model.freeze_conv and is_conv_param(name):
            continue
        p -= lr * grads[name]
    model.version += 1
    return model


def init_from_baseline(baseline: MvModel, target: MvModel, freeze_conv: bool = False) -> MvModel:
    """Copy the baseline's conv stack into every sub-network of ``target``.

    The hidden and softmax layers of ``target`` keep their own fresh
    initialization; nothing from the baseline head is copied.
    """
    src = baseline.subnets[0]
    for sub in target.subnets:
        if sub.widths != src.widths:
            raise ShapeError(f"baseline widths {src.widths} vs target widths {sub.widths}")
    target.subnets = [src.copy() for _ in target.view_order]
    target.freeze_conv = freeze_conv
    target.version += 1
    return target


def copy_model(model: MvModel) -> MvModel:
    return type(model)(
        view_order=model.view_order,
        subnets=[s.copy() for s in model.subnets],
        fc_w=model.fc_w.copy(), fc_b=model.fc_b.copy(),
        sm_w=model.sm_w.copy(), sm_b=model.sm_b.copy(),
        freeze_conv=model.freeze_conv,
    )


REDUCED_WIDTHS = (2, 3, 4, 5)


def reduced_model(kind: str, seed, num_views: int = 2, num_classes: int = 3, hidden: int = 6) -> MvModel:
    """Small-width model for finite-difference checks."""
    views = ("L", "C", "R", "U", "D")[:num_views]
    return init_model(kind, views, num_classes, seed, REDUCED_WIDTHS, hidden)


def activation_signature(cache: ForwardCache) -> bytes:
    """Which ReLUs fired and which pooling cells won, packed into bytes."""
    parts = []
    for acts in cache.acts:
        parts += [np.packbits(z > 0) for z in acts.pre_relu]
        parts += [idx.astype(np.uint8) for idx in acts.argmax]
    parts.append(np.packbits(cache.fc_pre > 0))
    return b"".join(p.tobytes() for p in parts)


@dataclass
class GradCheckResult:
    error: float
    worst: str | None
    checked: int
    skipped: int
    unfiltered: float


def check_model_gradients(kind: str, seed: int, eps: float = 1e-5, batch: int = 1,
                          corrupt: str | None = None, sample: int | None = None,
                          kink_aware: bool = True) -> GradCheckResult:
    """Compare ``model_backward`` against central differences.

    A random reduced-width model and random images/labels are drawn from
    ``seed``.  ``corrupt`` names a parameter whose analytic gradient is
    negated before comparison (detector sanity).  Coordinates whose probes
    switch a ReLU or pooling winner are excluded when ``kink_aware``; the
    result still carries the unfiltered maximum.
    """
    rng = np.random.default_rng([seed, 0x6C])
    model = reduced_model(kind, [seed, 0x6D])
    # small random biases so that no unit sits exactly at a ReLU kink
    for name, arr in model.named_params().items():
        if name.endswith(".b"):
            arr[...] = rng.uniform(-0.05, 0.05, size=arr.shape)
    sample_views = {v: rng.random((batch,) + (55, 47, 3)) for v in model.view_order}
    labels = rng.integers(model.num_classes, size=batch)
    _, cache = forward(model, sample_views)
    grads = model_backward(model, cache, labels)
    if corrupt is not None:
        if corrupt not in grads:
            raise KeyError(f"no parameter named {corrupt!r}")
        grads[corrupt] = -grads[corrupt]

    def probe():
        _, c = forward(model, sample_views)
        value = float(np.mean(-np.log(c.probs[np.arange(batch), labels])))
        return (value, activation_signature(c)) if kink_aware else value

    detail: dict = {}
    err = grad_check(probe, grads, model.named_params(), eps=eps, sample=sample, seed=seed,
                     detail=detail, kink_aware=kink_aware)
    return GradCheckResult(err, detail["worst"], detail["checked"], detail["skipped"], detail["unfiltered"])
