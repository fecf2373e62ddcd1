"""Training protocol, evaluation and model comparison."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .backbone import WIDTHS
from .models import (
    DEFAULT_LR,
    HIDDEN,
    MvModel,
    forward,
    init_from_baseline,
    init_model,
    model_backward,
    sgd_step,
)
from .synth import VIEWS, Sample, split_samples, stack_views

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
EVAL_CHUNK = 32
# Rate that reaches near-zero training error in 50 epochs at 20 identities
# with minibatch 16; the 1e-4 default is tuned for full-scale data.
DESK_SCALE_LR = 0.05


@dataclass
class TrainConfig:
    model_kind: str = "mv"
    view_order: tuple[str, ...] = ("L", "C", "R")
    num_classes: int = 504
    epochs: int = 50
    learning_rate: float = DEFAULT_LR
    minibatch_size: int = 16
    rng_seed: int = 0
    freeze_conv: bool = False
    widths: tuple[int, ...] = WIDTHS

    def __post_init__(self):
        self.view_order = tuple(str(v) for v in self.view_order)
        self.widths = tuple(self.widths)
        if self.model_kind not in ("baseline", "mv", "m2"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.model_kind == "baseline":
            self.view_order = ("C",)
        if not self.learning_rate >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch size must be >= 1")

    @property
    def diagnostic(self) -> bool:
        return len(self.view_order) == len(VIEWS)

    def baseline_config(self) -> "TrainConfig":
        return TrainConfig("baseline", ("C",), self.num_classes, self.epochs, self.learning_rate,
                           self.minibatch_size, self.rng_seed, False, self.widths)


@dataclass
class EpochRecord:
    epoch: int
    train_error: float
    valid_error: float
    test_error: float
    train_loss: float


@dataclass
class RunReport:
    config: TrainConfig
    curve: list[EpochRecord] = field(default_factory=list)
    final_accuracy: dict[str, float] = field(default_factory=dict)
    aggregation_dim: int = 0
    diagnostic: bool = False
    checkpoint: str | None = None
    wall_seconds: float = 0.0

    def errors(self, split: str) -> list[float]:
        return [getattr(r, f"{split}_error") for r in self.curve]

    @property
    def accuracy(self) -> float:
        return self.final_accuracy["test"]

    def to_dict(self) -> dict:
        """Serializable form.  Wall-clock time is left out so that reruns
        produce identical bytes."""
        d = asdict(self)
        d.pop("wall_seconds")
        d["config"]["view_order"] = list(self.config.view_order)
        d["config"]["widths"] = list(self.config.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        config = TrainConfig(**d.pop("config"))
        curve = [EpochRecord(**r) for r in d.pop("curve")]
        return cls(config=config, curve=curve, **d)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def predict(model: MvModel, samples: Sequence[Sample]) -> np.ndarray:
    preds = []
    for start in range(0, len(samples), EVAL_CHUNK):
        chunk = samples[start:start + EVAL_CHUNK]
        probs, _ = forward(model, stack_views(chunk, model.view_order))
        preds.append(np.argmax(probs, axis=-1))  # first maximum wins ties
    return np.concatenate(preds)


def evaluate(model: MvModel, samples: Sequence[Sample]) -> float:
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    labels = np.array([s.label for s in samples])
    return float(np.mean(predict(model, samples) == labels))


def error_rate(model: MvModel, samples: Sequence[Sample]) -> float:
    """Fraction of misclassified samples; NaN for an empty split."""
    if not samples:
        return float("nan")
    labels = np.array([s.label for s in samples])
    return float(np.mean(predict(model, samples) != labels))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _check_views(samples: Sequence[Sample], view_order: Sequence[str]):
    for s in samples:
        missing = [v for v in view_order if v not in s.views]
        if missing:
            raise ValueError(f"sample {s.label}/{s.index} lacks views {missing} needed by {tuple(view_order)}")


def fit(model: MvModel, samples: Sequence[Sample], config: TrainConfig) -> RunReport:
    """Run SGD epochs on ``model`` in place, recording per-epoch errors."""
    _check_views(samples, model.view_order)
    train_set = split_samples(samples, "train")
    by_split = {s: split_samples(samples, s) for s in SPLITS}
    if not train_set:
        raise ValueError("no training samples")
    labels = np.array([s.label for s in train_set])
    rng = np.random.default_rng([config.rng_seed, 0x5D])
    report = RunReport(config, aggregation_dim=model.feature_dim, diagnostic=config.diagnostic)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        sample_loss = np.zeros(len(train_set))
        for start in range(0, len(order), config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            batch = stack_views([train_set[i] for i in idx], model.view_order)
            _, cache = forward(model, batch)
            sample_loss[idx] = -np.log(cache.probs[np.arange(len(idx)), labels[idx]])
            grads = model_backward(model, cache, labels[idx])
            sgd_step(model, grads, config.learning_rate)
        errs = {s: error_rate(model, by_split[s]) for s in SPLITS}
        rec = EpochRecord(epoch + 1, errs["train"], errs["valid"], errs["test"], float(np.mean(sample_loss)))
        report.curve.append(rec)
        log.info("%s epoch %d: loss %.4f train %.3f valid %.3f test %.3f", config.model_kind, rec.epoch,
                 rec.train_loss, rec.train_error, rec.valid_error, rec.test_error)
    report.final_accuracy = {s: evaluate(model, by_split[s]) if by_split[s] else float("nan") for s in SPLITS}
    report.wall_seconds = time.perf_counter() - t0
    return report


def train(samples: Sequence[Sample], config: TrainConfig,
          baseline: MvModel | None = None) -> tuple[RunReport, MvModel]:
    """Train one model according to ``config``.

    Multi-view kinds start from a baseline pre-trained on the center views of
    the same samples for the same epoch budget; pass ``baseline`` to reuse
    one already trained with ``config.baseline_config()``.
    """
    model = init_model(config.model_kind, config.view_order, config.num_classes,
                       seed=[config.rng_seed, 1], widths=config.widths, hidden=HIDDEN)
    if config.model_kind != "baseline":
        if baseline is None:
            _, baseline = train(samples, config.baseline_config())
        init_from_baseline(baseline, model, config.freeze_conv)
    report = fit(model, samples, config)
    return report, model


def five_view_run(samples: Sequence[Sample], config: TrainConfig,
                  baseline: MvModel | None = None) -> tuple[RunReport, MvModel]:
    """All-five-view training, kept as a diagnostic of joint-view learning."""
    if tuple(config.view_order) != tuple(v.value for v in VIEWS):
        raise ValueError(f"five-view run needs views L,C,R,U,D, got {config.view_order}")
    report, model = train(samples, config, baseline)
    report.diagnostic = True
    return report, model


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

@dataclass
class TTestResult:
    n: int
    mean_diff: float
    std_diff: float
    t: float
    degenerate: bool = False


def paired_t_test(errs_a: Sequence[float], errs_b: Sequence[float]) -> TTestResult:
    """Paired t statistic over aligned series; positive when ``a`` is larger."""
    a = np.asarray(errs_a, dtype=np.float64)
    b = np.asarray(errs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired series must have equal 1-D shapes, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    d = a - b
    mean = float(d.mean())
    std = float(d.std(ddof=1))
    if std > 0:
        return TTestResult(n, mean, std, mean * math.sqrt(n) / std)
    if mean == 0:
        return TTestResult(n, 0.0, 0.0, 0.0)
    return TTestResult(n, mean, 0.0, math.copysign(math.inf, mean), degenerate=True)


@dataclass
class ComparisonTable:
    accuracy: dict[str, float]
    ttests: dict[str, dict[str, TTestResult]]  # "a-vs-b" -> split -> result

    def rows(self) -> list[list]:
        out = [["section", "model", "train", "valid", "test"]]
        for name, acc in self.accuracy.items():
            out.append(["accuracy", name, "", "", f"{acc:.6f}"])
        for pair, res in self.ttests.items():
            out.append(["t-value", pair] + [repr(res[s].t) for s in SPLITS])
        return out


PAIRS = (("baseline", "mv"), ("baseline", "m2"), ("mv", "m2"))


def compare(reports: dict[str, RunReport]) -> ComparisonTable:
    """Final accuracies and pairwise curve t-tests.

    ``reports`` maps names to runs; with the names baseline/mv/m2 the pairs
    follow the usual order (reference model first, so positive t favours the
    second).  Any three names are paired in insertion order.
    """
    names = list(reports)
    epochs = {len(r.curve) for r in reports.values()}
    if len(epochs) != 1:
        raise ValueError(f"reports have differing epoch counts {sorted(epochs)}")
    if set(names) == {"baseline", "mv", "m2"}:
        pairs = PAIRS
    else:
        pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    acc = {n: reports[n].accuracy for n in names}
    tt = {}
    for a, b in pairs:
        tt[f"{a}-vs-{b}"] = {s: paired_t_test(reports[a].errors(s), reports[b].errors(s)) for s in SPLITS}
    return ComparisonTable(acc, tt)
