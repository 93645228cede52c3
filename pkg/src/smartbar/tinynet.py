"""Small multidigit classifier: shared MLP trunk, one softmax head per digit.

Everything is plain numpy with hand-written backpropagation so training is
deterministic given a seed.  The trunk uses tanh so finite-difference
gradient checks are smooth everywhere.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .symbology import LENGTH

CHECKPOINT_FORMAT = "smartbar-multidigit"
CHECKPOINT_VERSION = 1


class DivergedLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class InputSpec:
    """Image -> feature vector: optional crop to the symbol, area resize, then
    per-image contrast normalisation to [-0.5, 0.5]."""

    # 190 columns put two samples on every one of the 95 modules after cropping
    width: int = 190
    height: int = 2
    crop: bool = True

    @property
    def size(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class KDConfig:
    # a sweep on held-out data favoured T=1: higher temperatures slowed
    # convergence of the 13-head student more than the softer targets helped
    alpha: float = 0.5
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr and batch_size must be positive, epochs >= 0")


def _resize_area(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Box-filter resample of a 2-D float array to (height, width)."""
    def weights(n_in, n_out):
        edges = np.linspace(0, n_in, n_out + 1)
        lo = np.arange(n_in)
        w = np.clip(np.minimum(edges[1:, None], lo + 1) - np.maximum(edges[:-1, None], lo), 0, None)
        return w / w.sum(axis=1, keepdims=True)

    return weights(img.shape[0], height) @ img @ weights(img.shape[1], width).T


def features(img: np.ndarray, spec: InputSpec = InputSpec()) -> np.ndarray:
    dark = 1.0 - np.asarray(img, dtype=np.float64) / 255.0
    if spec.crop:
        cols = dark.mean(axis=0)
        rows = dark.mean(axis=1)
        c = np.nonzero(cols > cols.min() + 0.5 * (cols.max() - cols.min()))[0]
        r = np.nonzero(rows > rows.min() + 0.5 * (rows.max() - rows.min()))[0]
        if c.size >= 2 and r.size >= 2:
            dark = dark[r[0]:r[-1] + 1, c[0]:c[-1] + 1]
    out = _resize_area(dark, spec.height, spec.width)
    lo, hi = np.percentile(out, [1, 99])
    if hi - lo > 1e-6:  # contrast-normalise so exposure changes do not shift inputs
        out = np.clip((out - lo) / (hi - lo), 0.0, 1.0)
    return (out - 0.5).ravel()


@dataclass
class MultidigitModel:
    """MLP with ``hidden`` tanh layers and ``n_digits`` heads of ``n_values``."""

    params: List[np.ndarray]
    hidden: Tuple[int, ...]
    input_spec: InputSpec = field(default_factory=InputSpec)
    n_inputs: int = 0
    n_digits: int = LENGTH
    n_values: int = 10

    @classmethod
    def init(cls, hidden: Sequence[int] = (128,), input_spec: InputSpec = InputSpec(),
             seed: int = 0, n_inputs: Optional[int] = None, n_digits: int = LENGTH,
             n_values: int = 10, scale: float = 1.0) -> "MultidigitModel":
        n_inputs = input_spec.size if n_inputs is None else n_inputs
        rng = np.random.default_rng(seed)
        sizes = [n_inputs, *hidden, n_digits * n_values]
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            params.append(rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return cls(params, tuple(hidden), input_spec, n_inputs, n_digits, n_values)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "MultidigitModel":
        return MultidigitModel([p.copy() for p in self.params], self.hidden, self.input_spec,
                               self.n_inputs, self.n_digits, self.n_values)

    def forward_features(self, x: np.ndarray, keep: bool = False):
        """Logits (N, n_digits, n_values) for a feature batch (N, n_inputs)."""
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        out = h.reshape(-1, self.n_digits, self.n_values)
        return (out, acts) if keep else out

    def backward(self, acts, dlogits: np.ndarray) -> List[np.ndarray]:
        """Parameter gradients given d(loss)/d(logits) of shape (N, digits, values)."""
        grads = [None] * len(self.params)
        g = dlogits.reshape(dlogits.shape[0], -1)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (1.0 - acts[i] ** 2)
        return grads

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return forward(self, img)


def forward(model: MultidigitModel, img: np.ndarray) -> np.ndarray:
    return model.forward_features(features(img, model.input_spec)[None, :])[0]


def _onehot(truth: np.ndarray, n_values: int) -> np.ndarray:
    return np.eye(n_values)[np.asarray(truth)]


def hard_loss(logits, truth) -> float:
    """Sum over digits of the cross-entropy against the true digit."""
    logits = np.asarray(logits, dtype=np.float64)
    truth = np.asarray(truth)
    lp = log_softmax(logits, axis=-1)
    return float(-np.take_along_axis(lp, truth[..., None], axis=-1).sum())


def kl_loss(student, teacher, temperature: float) -> float:
    """T^2-scaled KL(teacher_T || student_T), summed over digits."""
    t = temperature
    ls = log_softmax(np.asarray(student, float) / t, axis=-1)
    lt = log_softmax(np.asarray(teacher, float) / t, axis=-1)
    return float(t * t * (np.exp(lt) * (lt - ls)).sum())


def kd_loss(student, teacher, truth, cfg: KDConfig = KDConfig()) -> float:
    """``(1 - alpha) * hard + alpha * KL`` with softened distributions."""
    hard = hard_loss(student, truth)
    if cfg.alpha == 0.0:
        return hard
    return (1.0 - cfg.alpha) * hard + cfg.alpha * kl_loss(student, teacher, cfg.temperature)


def loss_grad(logits: np.ndarray, truth: np.ndarray, teacher: Optional[np.ndarray] = None,
              kd: Optional[KDConfig] = None) -> np.ndarray:
    """d(loss)/d(logits) for the hard loss, or the distillation loss if ``kd``."""
    g = softmax(logits, axis=-1) - _onehot(truth, logits.shape[-1])
    if kd is None:
        return g
    t = kd.temperature
    soft = softmax(logits / t, axis=-1) - softmax(teacher / t, axis=-1)
    return (1.0 - kd.alpha) * g + kd.alpha * t * soft


def batch_loss(model, x, truth, teacher=None, kd=None) -> float:
    logits = model.forward_features(x)
    if kd is None:
        return hard_loss(logits, truth)
    return kd_loss(logits, teacher, truth, kd)


@dataclass
class _Adam:
    lr: float
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(model: MultidigitModel, x: np.ndarray, truth: np.ndarray, cfg: TrainConfig = TrainConfig(),
        teacher_logits: Optional[np.ndarray] = None, kd: Optional[KDConfig] = None,
        on_epoch: Optional[Callable[[int, MultidigitModel, float], None]] = None,
        ) -> Tuple[MultidigitModel, List[float]]:
    """Mini-batch Adam on the mean per-sample loss.

    ``x`` holds precomputed features (N, n_inputs) and ``truth`` the digits
    (N, n_digits).  With ``kd`` set, ``teacher_logits`` (N, digits, values)
    supply the soft targets.  Returns a trained copy and the per-epoch mean
    training loss.
    """
    if len(x) == 0:
        raise ValueError("empty training set")
    if kd is not None and teacher_logits is None:
        raise ValueError("distillation needs teacher logits")
    model = model.copy()
    truth = np.asarray(truth)
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, acts = model.forward_features(x[idx], keep=True)
            teach = None if kd is None else teacher_logits[idx]
            loss = hard_loss(logits, truth[idx]) if kd is None else kd_loss(logits, teach, truth[idx], kd)
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            total += loss
            dlogits = loss_grad(logits, truth[idx], teach, kd) / len(idx)
            opt.step(model.params, model.backward(acts, dlogits))
        history.append(total / len(x))
        if on_epoch is not None:
            on_epoch(epoch + 1, model, history[-1])
    return model, history


def feature_matrix(samples: Sequence, spec: InputSpec) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([features(s.image, spec) for s in samples])
    y = np.array([s.truth for s in samples], dtype=np.int64)
    return x, y


def train(model: MultidigitModel, samples: Sequence, cfg: TrainConfig = TrainConfig(),
          kd: Optional[Tuple[MultidigitModel, KDConfig]] = None,
          ) -> Tuple[MultidigitModel, List[float]]:
    """Train on a list of samples; ``kd`` is an optional ``(teacher, KDConfig)``."""
    if not len(samples):
        raise ValueError("empty training set")
    x, y = feature_matrix(samples, model.input_spec)
    if kd is None:
        return fit(model, x, y, cfg)
    teacher, kd_cfg = kd
    tx = x if teacher.input_spec == model.input_spec else feature_matrix(samples, teacher.input_spec)[0]
    return fit(model, x, y, cfg, teacher.forward_features(tx), kd_cfg)


def train_curriculum(model: MultidigitModel, stages: Sequence[Sequence], cfg: TrainConfig = TrainConfig(),
                     kd: Optional[Tuple[MultidigitModel, KDConfig]] = None,
                     ) -> Tuple[MultidigitModel, List[float]]:
    """Train on each stage in turn (e.g. synthetic-only, then the mixed set),
    concatenating the loss histories."""
    history: List[float] = []
    for k, stage in enumerate(stages):
        model, h = train(model, stage, replace(cfg, seed=cfg.seed + k), kd)
        history += h
    return model, history


def greedy_accuracy(model: MultidigitModel, x: np.ndarray, truth: np.ndarray) -> float:
    pred = model.forward_features(x).argmax(axis=-1)
    return float(np.all(pred == np.asarray(truth), axis=1).mean())


@dataclass(frozen=True)
class DistillRun:
    seed: int
    plain: float
    distilled: float

    @property
    def delta(self) -> float:
        return self.distilled - self.plain

    def to_json(self) -> dict:
        return {"seed": self.seed, "plain": self.plain, "distilled": self.distilled, "delta": self.delta}


def compare_distillation(teacher: MultidigitModel, train_set: Sequence, held_out: Sequence,
                         hidden: Sequence[int], seeds: Sequence[int], cfg: TrainConfig = TrainConfig(),
                         kd: KDConfig = KDConfig(), spec: InputSpec = InputSpec(),
                         ) -> Tuple[List[DistillRun], List[MultidigitModel]]:
    """Per seed, train a plain and a distilled student from the same
    initialisation and batch order; return held-out greedy accuracies and
    the distilled students."""
    x, y = feature_matrix(train_set, spec)
    tx = x if teacher.input_spec == spec else feature_matrix(train_set, teacher.input_spec)[0]
    teacher_logits = teacher.forward_features(tx)
    hx, hy = feature_matrix(held_out, spec)
    runs, students = [], []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        init = MultidigitModel.init(hidden, spec, seed=seed)
        plain, _ = fit(init, x, y, run_cfg)
        student, _ = fit(init, x, y, run_cfg, teacher_logits, kd)
        runs.append(DistillRun(seed, greedy_accuracy(plain, hx, hy), greedy_accuracy(student, hx, hy)))
        students.append(student)
    return runs, students


def distill_markdown(rows: Sequence[dict], kd: KDConfig) -> str:
    lines = [f"distillation (alpha={kd.alpha}, T={kd.temperature})", "",
             "| seed | plain | distilled | delta |", "|---:|---:|---:|---:|"]
    for r in rows:
        if "plain" in r:
            lines.append(f"| {r['seed']} | {100 * r['plain']:.2f}% | {100 * r['distilled']:.2f}% | "
                         f"{100 * r['delta']:+.2f} |")
        else:
            lines.append(f"| {r['seed']} | | | |")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: MultidigitModel, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input": asdict(model.input_spec),
        "n_inputs": model.n_inputs,
        "hidden": list(model.hidden),
        "n_digits": model.n_digits,
        "n_values": model.n_values,
        "activation": "tanh",
        "shapes": [list(p.shape) for p in model.params],
        "params": [p.ravel().tolist() for p in model.params],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> MultidigitModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    params = [np.asarray(p, dtype=np.float64).reshape(s) for p, s in zip(doc["params"], doc["shapes"])]
    return MultidigitModel(params, tuple(doc["hidden"]), InputSpec(**doc["input"]),
                           doc["n_inputs"], doc["n_digits"], doc["n_values"])


def write_history(history: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history, 1):
            w.writerow([i, repr(float(loss))])
