"""Softmax relation classifier trained with cross-entropy plus weighted constraint loss."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .encoding import build_encoding
from .inference import PredictionSet, count_violations
from .loss import DEFAULT_EPS, Batch, batch_constraint_loss
from .mining import ConstraintSets


class NumericalError(RuntimeError):
    pass


@dataclass
class ScheduleConfig:
    mode: str = "constant"
    lambda_const: float = 0.0
    alpha: float = 0.0
    total_epochs: int = 1

    def __post_init__(self):
        if self.mode not in ("constant", "triangular"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.lambda_const < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be non-negative")
        if self.mode == "triangular" and self.total_epochs < 1:
            raise ValueError("triangular schedule needs total_epochs >= 1")


def lambda_at(schedule: ScheduleConfig, epoch: int) -> float:
    """Constraint-loss weight for an epoch.

    The triangular mode rises linearly from 0 to ``alpha`` at the midpoint
    and falls back to 0 at ``total_epochs``.
    """
    if epoch < 0:
        raise ValueError(f"epoch {epoch} is negative")
    if schedule.mode == "constant":
        return schedule.lambda_const
    if epoch > schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    frac = 2 * abs(epoch - 0.5 * schedule.total_epochs) / schedule.total_epochs
    return schedule.alpha - schedule.alpha * frac


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    encoding_kind: str = "semantic"
    eps: float = DEFAULT_EPS
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: str = "sgd"
    pairs: str = "unordered"

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleConfig(**self.schedule)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.encoding_kind not in ("coherent", "semantic"):
            raise ValueError(f"unknown encoding {self.encoding_kind!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        uses_constraints = (self.schedule.lambda_const > 0 if self.schedule.mode == "constant"
                            else self.schedule.alpha > 0)
        if uses_constraints and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when the constraint loss is used")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierModel:
    W: np.ndarray   # (n_relations, feature_dim)
    b: np.ndarray   # (n_relations,)

    @classmethod
    def init(cls, n_relations: int, feature_dim: int, rng, scale: float = 0.01) -> "ClassifierModel":
        return cls(scale * rng.standard_normal((n_relations, feature_dim)), np.zeros(n_relations))

    def logits(self, X) -> np.ndarray:
        return np.asarray(X) @ self.W.T + self.b

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=-1)

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.W.copy(), self.b.copy())

    _MAGIC = b"RELCONS1"

    def save(self, path, relations=None) -> None:
        """Header line (JSON) after a magic tag, then little-endian float64 W and b."""
        header = json.dumps({"shape": list(self.W.shape), "relations": relations}).encode()
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self.W.astype("<f8").tobytes())
            fh.write(self.b.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if not data.startswith(cls._MAGIC):
            raise ValueError(f"{path}: not a model file")
        off = len(cls._MAGIC)
        (size,) = struct.unpack_from("<I", data, off)
        off += 4
        header = json.loads(data[off:off + size])
        off += size
        r, d = header["shape"]
        W = np.frombuffer(data, "<f8", r * d, off).reshape(r, d).astype(np.float64)
        b = np.frombuffer(data, "<f8", r, off + 8 * r * d).astype(np.float64)
        return cls(W, b), header.get("relations")


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def _cross_entropy(P, y) -> float:
    return float(-np.mean(np.log(np.maximum(P[np.arange(len(y)), y], 1e-300))))


def train(X, triples, sets: ConstraintSets, config: TrainConfig, encoding=None,
          init: Optional[ClassifierModel] = None):
    """Mini-batch training on ``L_O + lambda(epoch) * L_C``.

    ``triples`` carry the observed labels (``rel``) and the entity pairs
    that gate the constraint loss. Epoch ``e`` (0-based) uses
    ``lambda_at(schedule, e)``. Returns ``(model, history)`` where each
    history row holds the epoch's mean ``L_O``, mean per-batch ``L_C``,
    ``lambda`` and the argmax violation count on the training data after
    the epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.array([t.rel for t in triples], dtype=np.int64)
    n, d = X.shape
    r = sets.n_relations
    if len(triples) != n:
        raise ValueError("one triple per feature row is required")
    if encoding is None:
        encoding = build_encoding(sets, config.encoding_kind)
    rng = np.random.default_rng(config.seed)
    model = init.copy() if init is not None else ClassifierModel.init(r, d, rng)
    params = {"W": model.W, "b": model.b}
    opt = _Adam(config.learning_rate) if config.optimizer == "adam" else _SGD(config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        lam = lambda_at(config.schedule, epoch)
        order = rng.permutation(n)
        lo_sum, lc_sum, n_batches = 0.0, 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = X[idx]
            P = softmax(model.logits(xb))
            l_o = _cross_entropy(P, y[idx])
            batch = Batch([triples[k] for k in idx], P)
            rep = batch_constraint_loss(batch, encoding, eps=config.eps, want_grads=lam > 0,
                                        pairs=config.pairs, na_index=sets.na_index, validate=False)
            if not (np.isfinite(l_o) and np.isfinite(rep.total)):
                raise NumericalError(f"non-finite loss at epoch {epoch}: L_O={l_o}, L_C={rep.total}")
            dZ = P.copy()
            dZ[np.arange(len(idx)), y[idx]] -= 1.0
            dZ /= len(idx)
            if lam > 0:
                G = rep.grads
                dZ += lam * P * (G - np.sum(P * G, axis=1, keepdims=True))
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow shows up as non-finite weights, reported just below
                opt.step(params, {"W": dZ.T @ xb, "b": dZ.sum(axis=0)})
            if not (np.all(np.isfinite(model.W)) and np.all(np.isfinite(model.b))):
                raise NumericalError(f"non-finite weights at epoch {epoch}")
            lo_sum += l_o
            lc_sum += rep.total
            n_batches += 1
        preds = PredictionSet.from_arrays(triples, model.predict_proba(X))
        history.append({
            "epoch": epoch,
            "L_O": lo_sum / n_batches,
            "L_C": lc_sum / n_batches,
            "lambda": lam,
            "violations": count_violations(preds, sets).total,
        })
    return model, history
