"""SGD training of toy models and variant-comparison sweeps."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .layer import Variant
from .model import Model, build_toy_model


class DivergenceError(RuntimeError):
    pass


@dataclass
class Hyper:
    lr: float = 0.1
    lr_decay: float = 0.2      # multiply lr by this ...
    decay_every: int = 50      # ... every this many epochs
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 250
    seed: int = 0
    precision: str = "single"
    augment: bool = False

    def __post_init__(self):
        for name in ("lr", "lr_decay", "decay_every", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("momentum", "weight_decay", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


# ResNet-164 on CIFAR-100: 250 epochs, lr / 5 every 50 epochs
CIFAR_RESNET164_HYPER = Hyper()
# same recipe shrunk to desk scale; the shipped ablation experiment uses these
DEFAULT_HYPER = Hyper(lr=0.1, lr_decay=0.2, decay_every=8, momentum=0.9, weight_decay=5e-4,
                      batch_size=64, epochs=16, seed=0)
DEFAULT_DATA = {"n_train": 2000, "n_val": 1000, "classes": 4, "size": 12}
DEFAULT_MODEL = {"channels": 8, "blocks": 2}


class SGD:
    """Momentum SGD with L2 weight decay added to the gradient.

    ``v <- momentum * v + (g + weight_decay * w)``; ``w <- w - lr * v``.
    """

    def __init__(self, model: Model, momentum: float = 0.0, weight_decay: float = 0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float):
        for name, layer, key in self.model.named_params():
            w = layer.params[key]
            g = layer.grads[key]
            if self.weight_decay:
                g = g + self.weight_decay * w
            if self.momentum:
                v = self.velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            w -= (lr * g).astype(w.dtype)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def _augment(x: np.ndarray, rng) -> np.ndarray:
    """Random 4-pixel-padded crop and horizontal flip."""
    n, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (4, 4), (4, 4)))
    dy = rng.integers(0, 9, n)
    dx = rng.integers(0, 9, n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        crop = xp[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def evaluate(model: Model, data: Dataset, batch_size: int = 256) -> float:
    correct = 0
    for i in range(0, len(data), batch_size):
        logits = model.forward(data.images[i:i + batch_size], train=False)
        correct += int((logits.argmax(axis=1) == data.labels[i:i + batch_size]).sum())
    return correct / max(len(data), 1)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    initial_loss: float
    val_accuracy: float
    params: int
    config: dict
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, timing: bool = False) -> dict:
        d = {"epochs": [asdict(e) for e in self.epochs], "initial_loss": self.initial_loss,
             "val_accuracy": self.val_accuracy, "params": self.params, "config": self.config}
        if timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _dataset_loss(model: Model, data: Dataset, batch_size: int = 256) -> float:
    total = 0.0
    for i in range(0, len(data), batch_size):
        logits = model.forward(data.images[i:i + batch_size], train=False)
        total += softmax_cross_entropy(logits, data.labels[i:i + batch_size])[0] * len(logits)
    return total / max(len(data), 1)


def train(model: Model, data: Dataset, hyper: Hyper, val: Dataset | None = None,
          config: dict | None = None) -> TrainReport:
    """Train ``model`` in place; ``val`` defaults to the training data.

    Shuffling (and augmentation, if enabled) draws from ``hyper.seed`` only, so
    a fixed seed reproduces the run exactly.
    """
    val = data if val is None else val
    dtype = np.float64 if hyper.precision == "double" else np.float32
    images = data.images.astype(dtype, copy=False)
    rng = np.random.default_rng(hyper.seed)
    opt = SGD(model, hyper.momentum, hyper.weight_decay)
    start = time.perf_counter()
    initial_loss = _dataset_loss(model, data)
    records = []
    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        order = rng.permutation(len(data))
        loss_sum, correct = 0.0, 0
        for b in range(0, len(order), hyper.batch_size):
            idx = order[b:b + hyper.batch_size]
            x = images[idx]
            if hyper.augment:
                x = _augment(x, rng)
            logits = model.forward(x, train=True)
            loss, grad = softmax_cross_entropy(logits, data.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss became {loss} at epoch {epoch}, batch {b // hyper.batch_size} "
                    f"(lr={lr:g}); lower the learning rate")
            model.backward(grad.astype(dtype))
            opt.step(lr)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == data.labels[idx]).sum())
        records.append(EpochRecord(epoch, lr, loss_sum / len(data), correct / len(data)))
    acc = evaluate(model, val)
    cfg = {"hyper": asdict(hyper), "variant": getattr(model.variant, "value", None)}
    cfg.update(config or {})
    return TrainReport(records, initial_loss, acc, model.num_params(), cfg,
                       time.perf_counter() - start)


@dataclass
class ComparisonRow:
    variant: str
    accuracies: list[float]
    params: int
    macs: int
    failures: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def min(self) -> float:
        return min(self.accuracies) if self.accuracies else float("nan")

    @property
    def max(self) -> float:
        return max(self.accuracies) if self.accuracies else float("nan")


@dataclass
class Comparison:
    rows: list[ComparisonRow]
    seeds: list[int]
    config: dict

    def row(self, variant) -> ComparisonRow:
        v = Variant.parse(variant).value
        return next(r for r in self.rows if r.variant == v)

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "config": self.config,
                "rows": [{"variant": r.variant, "mean": r.mean, "min": r.min, "max": r.max,
                          "accuracies": r.accuracies, "params": r.params, "macs": r.macs,
                          "failures": r.failures} for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'Variant':<18} {'Params':>8} {'MACs':>11} {'Acc mean':>9} "
                 f"{'min':>7} {'max':>7}"]
        for r in self.rows:
            lines.append(f"{r.variant:<18} {r.params:>8,} {r.macs:>11,} {100 * r.mean:>8.2f}% "
                         f"{100 * r.min:>6.2f}% {100 * r.max:>6.2f}%"
                         + (f"  ({len(r.failures)} failed)" if r.failures else ""))
        return "\n".join(lines) + "\n"


def compare_variants(data: Dataset, variants, hyper: Hyper, seeds, val: Dataset | None = None,
                     model_kwargs: dict | None = None) -> Comparison:
    """Train one toy model per (variant, seed) and tabulate final accuracy.

    The seed drives both model initialization and data shuffling. A cell that
    raises is recorded in that row's ``failures`` and the sweep continues.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    model_kwargs = dict(DEFAULT_MODEL, **(model_kwargs or {}))
    model_kwargs.setdefault("in_channels", data.images.shape[1])
    model_kwargs.setdefault("classes", data.classes)
    hw = data.images.shape[2:]
    rows = []
    for variant in variants:
        variant = Variant.parse(variant)
        accs, failures = [], []
        probe = build_toy_model(variant, **model_kwargs)
        for seed in seeds:
            model = build_toy_model(variant, seed=seed, precision=hyper.precision, **model_kwargs)
            h = Hyper(**{**asdict(hyper), "seed": seed})
            try:
                accs.append(train(model, data, h, val).val_accuracy)
            except (DivergenceError, FloatingPointError, ValueError) as e:
                failures.append(f"seed {seed}: {e}")
        rows.append(ComparisonRow(variant.value, accs, probe.num_params(), probe.macs(hw),
                                  failures))
    return Comparison(rows, seeds, {"hyper": asdict(hyper), "model": model_kwargs})


def check_model_gradients(model: Model, x: np.ndarray, labels: np.ndarray,
                          epsilon: float = 3e-4, tolerance: float = 1e-6,
                          max_entries: int = 24, seed: int = 0):
    """Five-point central-difference check of ``model.backward`` on the mean cross-entropy
    of one batch, in training mode (batch-statistics normalization).

    Entries whose perturbation flips any ReLU mask straddle a kink, where the
    loss is not differentiable; they are skipped, and the returned report's
    ``skipped`` attribute counts them per parameter. Needs a double-precision
    model. Returns a :class:`~cpwc.layer.CheckReport` keyed by parameter name.
    """
    from .layer import CheckReport
    from .model import ReLU

    x = np.asarray(x, dtype=np.float64)
    if any(layer.params[k].dtype != np.float64 for _, layer, k in model.named_params()):
        raise ValueError("model gradient checks need a double-precision model")
    rng = np.random.default_rng(seed)
    relus = [layer for layer in model.layers if isinstance(layer, ReLU)]

    def loss():
        value = softmax_cross_entropy(model.forward(x, train=True), labels)[0]
        return value, [r.mask.copy() for r in relus]

    _, g = softmax_cross_entropy(model.forward(x, train=True), labels)
    masks = [r.mask.copy() for r in relus]
    model.backward(g)
    analytic = {name: layer.grads[k].copy() for name, layer, k in model.named_params()}
    errors, checked, skipped = {}, {}, {}
    for name, layer, k in model.named_params():
        arr = layer.params[k].reshape(-1)
        idx = np.arange(arr.size) if arr.size <= max_entries else \
            np.sort(rng.choice(arr.size, max_entries, replace=False))
        worst, n_skip = 0.0, 0
        for i in idx:
            orig = arr[i]
            values, kink = [], False
            for step in (-2, -1, 1, 2):
                arr[i] = orig + step * epsilon
                value, m = loss()
                values.append(value)
                kink = kink or any((a != b).any() for a, b in zip(masks, m))
            arr[i] = orig
            if kink:
                n_skip += 1
                continue
            # fourth-order central stencil; truncation error O(epsilon^4)
            num = (values[0] - 8 * values[1] + 8 * values[2] - values[3]) / (12 * epsilon)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-12))
        errors[name], checked[name] = worst, int(idx.size) - n_skip
        skipped[name] = n_skip
    return CheckReport(errors, tolerance, epsilon, checked, skipped)
