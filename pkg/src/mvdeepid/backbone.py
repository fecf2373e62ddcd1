"""The four-layer DeepID convolutional feature extractor.

Input crops are 55x47x3.  Kernel sizes 4, 3, 3, 2 with valid stride-1
convolution and 2x2 max pooling after the first three layers give the
activation shapes (26,22,20), (12,10,40), (5,4,60), (4,3,80).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    as_tensor,
    conv2d_backward,
    conv2d_forward,
    im2col,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
)

INPUT_SHAPE = (55, 47, 3)
KERNELS = (4, 3, 3, 2)
WIDTHS = (20, 40, 60, 80)
LAYER_SHAPES = ((26, 22, 20), (12, 10, 40), (5, 4, 60), (4, 3, 80))
LAYERS = ("conv1", "conv2", "conv3", "conv4")


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def layer_shapes(widths=WIDTHS) -> tuple[tuple[int, int, int], ...]:
    h, w = INPUT_SHAPE[:2]
    shapes = []
    for i, (k, c) in enumerate(zip(KERNELS, widths)):
        h, w = h - k + 1, w - k + 1
        if i < 3:
            h, w = h // 2, w // 2
        shapes.append((h, w, c))
    return tuple(shapes)


@dataclass
class BackboneParams:
    """Conv weights ``(k, k, Ci, Co)`` and biases ``(Co,)`` for conv1..conv4.

    ``widths`` defaults to the full 20/40/60/80 filters; reduced clones used
    for gradient checking pass smaller widths.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    widths: tuple[int, ...] = WIDTHS

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if len(self.weights) != 4 or len(self.biases) != 4 or len(self.widths) != 4:
            raise ShapeError("BackboneParams needs exactly four conv layers")
        cin = INPUT_SHAPE[2]
        for i, (k, cout) in enumerate(zip(KERNELS, self.widths)):
            want = (k, k, cin, cout)
            if self.weights[i].shape != want:
                raise ShapeError(f"{LAYERS[i]} weights {self.weights[i].shape}, expected {want}")
            if self.biases[i].shape != (cout,):
                raise ShapeError(f"{LAYERS[i]} bias {self.biases[i].shape}, expected {(cout,)}")
            cin = cout

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for name, w, b in zip(LAYERS, self.weights, self.biases):
            out[f"{name}.w"] = w
            out[f"{name}.b"] = b
        return out

    def copy(self) -> "BackboneParams":
        return BackboneParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.widths)

    def num_params(self) -> int:
        return sum(a.size for a in self.named().values())


@dataclass
class BackboneActivations:
    """Per-layer outputs plus what backward needs.

    ``layers[i]`` is the post-ReLU (and, for i < 3, post-pool) output of
    conv ``i+1``; ``inputs[i]`` is what conv ``i+1`` consumed.
    """

    image: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)
    cols: list[np.ndarray] = field(default_factory=list)
    pre_relu: list[np.ndarray] = field(default_factory=list)
    argmax: list[np.ndarray] = field(default_factory=list)
    layers: list[np.ndarray] = field(default_factory=list)

    @property
    def layer1(self):
        return self.layers[0]

    @property
    def layer2(self):
        return self.layers[1]

    @property
    def layer3(self):
        return self.layers[2]

    @property
    def layer4(self):
        return self.layers[3]


def init_backbone(seed, widths=WIDTHS) -> BackboneParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    cin = INPUT_SHAPE[2]
    for k, cout in zip(KERNELS, widths):
        bound = glorot_bound(k * k * cin, k * k * cout)
        weights.append(rng.uniform(-bound, bound, size=(k, k, cin, cout)))
        biases.append(np.zeros(cout))
        cin = cout
    return BackboneParams(weights, biases, tuple(widths))


def backbone_forward(image, params: BackboneParams) -> BackboneActivations:
    """conv -> ReLU -> pool three times, then conv4 -> ReLU.

    ``image`` is (55, 47, 3) or batched (B, 55, 47, 3).
    """
    x = as_tensor(image)
    if x.shape[-3:] != INPUT_SHAPE:
        raise ShapeError(f"backbone expects (..., 55, 47, 3) input, got {x.shape}")
    acts = BackboneActivations(image=x)
    for i in range(4):
        acts.inputs.append(x)
        cols = im2col(np.ascontiguousarray(x), KERNELS[i])
        acts.cols.append(cols)
        z = conv2d_forward(x, params.weights[i], params.biases[i], cols=cols)
        acts.pre_relu.append(z)
        a = relu(z)
        if i < 3:
            a, idx = maxpool2(a)
            acts.argmax.append(idx)
        acts.layers.append(a)
        x = a
    return acts


def backbone_backward(acts: BackboneActivations, params: BackboneParams, layer4_grad,
                      layer3_grad=None, need_input_grad: bool = True
                      ) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Gradients for every conv parameter plus the input image.

    ``layer3_grad`` (optional) is an extra gradient arriving directly at the
    pooled layer-3 output, as used by the multi-level model.  Returns
    ``(param_grads, input_grad)`` with ``param_grads`` keyed like
    ``BackboneParams.named``; ``input_grad`` is None unless requested.
    """
    g = as_tensor(layer4_grad)
    if g.shape != acts.layers[3].shape:
        raise ShapeError(f"layer4 grad {g.shape} vs activation {acts.layers[3].shape}")
    if layer3_grad is not None:
        layer3_grad = as_tensor(layer3_grad)
        if layer3_grad.shape != acts.layers[2].shape:
            raise ShapeError(f"layer3 grad {layer3_grad.shape} vs activation {acts.layers[2].shape}")

    grads: dict[str, np.ndarray] = {}
    for i in (3, 2, 1, 0):
        if i < 3:
            if i == 2 and layer3_grad is not None:
                g = g + layer3_grad
            g = maxpool2_backward(g, acts.argmax[i])
        g = relu_backward(acts.pre_relu[i], g)
        lg = conv2d_backward(acts.inputs[i], params.weights[i], g, cols=acts.cols[i],
                             need_input_grad=need_input_grad or i > 0)
        grads[f"{LAYERS[i]}.w"] = lg.param_grads["w"]
        grads[f"{LAYERS[i]}.b"] = lg.param_grads["b"]
        g = lg.input_grad
    ordered = {k: grads[k] for k in params.named()}
    return ordered, g
