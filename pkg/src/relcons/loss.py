"""Pairwise constraint losses, batch aggregation and analytic gradients.

Every local loss is ``-log(max(s, eps))`` where ``s`` is a satisfaction
score of two probability vectors against one constraint set:

* coherent, type set:   ``s = sum_ij v[i, j] * pm[i] * pn[j]``
* coherent, card set:   ``s = sum_i v[i] * pm[i] * pn[i]``
* semantic, any set:    ``s = sum over rules u of f(pm, pn, u)`` where
  for type rules ``q = pm + pn - pm*pn`` and
  ``f = prod_{u=1} q * prod_{u=0} (1 - q)``, and for cardinality rules
  ``f = prod_{u=1} pm*pn * prod_{u=0} (1 - pm*pn)``.

The batch loss sums gated local losses over instance pairs in a fixed
lexicographic order, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoding import CoherentVectors, SemanticRuleSets
from .indicators import PairGates, pair_gates
from .mining import CARD_SETS, SET_NAMES

DEFAULT_EPS = 1e-12
PAIR_MODES = ("unordered", "ordered", "all")


def check_probs(p, n: Optional[int] = None, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"probability vector must be 1-D, got shape {p.shape}")
    if n is not None and p.shape[0] != n:
        raise ValueError(f"dimension mismatch: expected {n} entries, got {p.shape[0]}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum():.9g}, not 1")
    return p


def _pair(p_m, p_n) -> tuple[np.ndarray, np.ndarray]:
    p_m = np.asarray(p_m, dtype=np.float64)
    p_n = np.asarray(p_n, dtype=np.float64)
    if p_m.shape[-1] != p_n.shape[-1]:
        raise ValueError(f"dimension mismatch: {p_m.shape[-1]} vs {p_n.shape[-1]}")
    return p_m, p_n


def _neglog(s, eps: float):
    return -np.log(np.maximum(s, eps))


# ---------------------------------------------------------------------------
# scores (broadcast over leading axes of p_m / p_n)


def coherent_type_score(p_m, p_n, v) -> np.ndarray:
    p_m, p_n = _pair(p_m, p_n)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (p_m.shape[-1],) * 2:
        raise ValueError(f"dimension mismatch: matrix {v.shape} for {p_m.shape[-1]} relations")
    return np.sum((p_m @ v) * p_n, axis=-1)


def coherent_card_score(p_m, p_n, v) -> np.ndarray:
    p_m, p_n = _pair(p_m, p_n)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (p_m.shape[-1],):
        raise ValueError(f"dimension mismatch: vector {v.shape} for {p_m.shape[-1]} relations")
    return np.sum(v * p_m * p_n, axis=-1)


def _rule_factors(x, u) -> np.ndarray:
    """``x`` where the rule bit is set, ``1 - x`` elsewhere; shape (..., K, R)."""
    return np.where(u > 0, x[..., None, :], 1.0 - x[..., None, :])


def _rules(u, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != n:
        raise ValueError(f"dimension mismatch: rule length {u.shape[-1]} for {n} relations")
    return u


def semantic_scores_type(p_m, p_n, rules) -> np.ndarray:
    """Per-rule type scores, shape (..., K)."""
    p_m, p_n = _pair(p_m, p_n)
    u = _rules(rules, p_m.shape[-1])
    q = p_m + p_n - p_m * p_n
    return np.prod(_rule_factors(q, np.atleast_2d(u)), axis=-1)


def semantic_scores_card(p_m, p_n, rules) -> np.ndarray:
    p_m, p_n = _pair(p_m, p_n)
    u = _rules(rules, p_m.shape[-1])
    return np.prod(_rule_factors(p_m * p_n, np.atleast_2d(u)), axis=-1)


def semantic_score_type(p_m, p_n, u) -> float:
    """Probability-style match of a pair against one type rule."""
    if np.ndim(u) != 1:
        raise ValueError("expected a single rule vector")
    return float(semantic_scores_type(p_m, p_n, u)[..., 0])


def semantic_score_card(p_m, p_n, u) -> float:
    if np.ndim(u) != 1:
        raise ValueError("expected a single rule vector")
    return float(semantic_scores_card(p_m, p_n, u)[..., 0])


# ---------------------------------------------------------------------------
# local losses


def coherent_type_local(p_m, p_n, v, indicator: int, eps: float = DEFAULT_EPS) -> float:
    s = coherent_type_score(p_m, p_n, v)
    return float(_neglog(s, eps)) if indicator else 0.0


def coherent_card_local(p_m, p_n, v, indicator: int, eps: float = DEFAULT_EPS) -> float:
    s = coherent_card_score(p_m, p_n, v)
    return float(_neglog(s, eps)) if indicator else 0.0


def semantic_local(p_m, p_n, rules, kind: str, indicator: int, eps: float = DEFAULT_EPS,
                   strict_empty: bool = False) -> float:
    """Semantic local loss; an empty rule list is gated to 0 unless ``strict_empty``."""
    if kind not in ("type", "card"):
        raise ValueError(f"kind must be 'type' or 'card', not {kind!r}")
    p_m, p_n = _pair(p_m, p_n)
    rules = np.asarray(rules, dtype=np.float64).reshape(-1, p_m.shape[-1])
    if not indicator:
        return 0.0
    if rules.shape[0] == 0:
        return float(-math.log(eps)) if strict_empty else 0.0
    score = semantic_scores_type if kind == "type" else semantic_scores_card
    return float(_neglog(score(p_m, p_n, rules).sum(axis=-1), eps))


# ---------------------------------------------------------------------------
# values and gradients for stacks of pairs (K x |R| each)


def _others_product(a: np.ndarray) -> np.ndarray:
    """Product of all entries except the one at each position, along the last axis."""
    pre = np.ones_like(a)
    suf = np.ones_like(a)
    if a.shape[-1] > 1:
        pre[..., 1:] = np.cumprod(a[..., :-1], axis=-1)
        suf[..., :-1] = np.cumprod(a[..., :0:-1], axis=-1)[..., ::-1]
    return pre * suf


def _finish(s, da, db, eps):
    """Turn scores and their partials into clamped losses and loss partials."""
    ok = s >= eps
    safe = np.where(ok, s, 1.0)
    vals = np.where(ok, -np.log(safe), -math.log(eps))
    scale = np.where(ok, -1.0 / safe, 0.0)[:, None]
    return vals, da * scale, db * scale


def _coherent_type_grad(pa, pb, v, eps):
    vb = pb @ v.T
    va = pa @ v
    return _finish(np.sum(pa * vb, axis=1), vb, va, eps)


def _coherent_card_grad(pa, pb, v, eps):
    return _finish((pa * pb) @ v, v * pb, v * pa, eps)


def _semantic_grad(x, u, eps):
    """Score sum over rules and its partial w.r.t. ``x`` (q for type rules, pm*pn for card)."""
    a = np.where(u[None] > 0, x[:, None, :], 1.0 - x[:, None, :])
    s = np.prod(a, axis=-1).sum(axis=-1)
    ds_dx = np.sum(_others_product(a) * np.where(u > 0, 1.0, -1.0)[None], axis=1)
    return s, ds_dx


def _semantic_type_grad(pa, pb, u, eps):
    s, ds_dq = _semantic_grad(pa + pb - pa * pb, u, eps)
    return _finish(s, ds_dq * (1.0 - pb), ds_dq * (1.0 - pa), eps)


def _semantic_card_grad(pa, pb, u, eps):
    s, ds_dx = _semantic_grad(pa * pb, u, eps)
    return _finish(s, ds_dx * pb, ds_dx * pa, eps)


def local_values_and_grads(enc, name: str, pa, pb, eps: float = DEFAULT_EPS):
    """Un-gated local losses of stacked pairs and their partials w.r.t. both sides."""
    pa = np.atleast_2d(np.asarray(pa, dtype=np.float64))
    pb = np.atleast_2d(np.asarray(pb, dtype=np.float64))
    if enc.kind == "coherent":
        fn = _coherent_card_grad if name in CARD_SETS else _coherent_type_grad
    else:
        fn = _semantic_card_grad if name in CARD_SETS else _semantic_type_grad
    return fn(pa, pb, np.asarray(enc[name], dtype=np.float64), eps)


def local_value_and_grad(enc, name: str, p_m, p_n, eps: float = DEFAULT_EPS):
    vals, ga, gb = local_values_and_grads(enc, name, p_m, p_n, eps)
    return float(vals[0]), ga[0], gb[0]


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Instances with gold triples and predicted distributions ``probs`` (B x |R|)."""

    triples: list
    probs: np.ndarray
    ids: Optional[list] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.triples):
            raise ValueError("probs must be a (n_instances, n_relations) array")
        if len(self.triples) < 1:
            raise ValueError("a batch needs at least one instance")
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.triples))]

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def n_relations(self) -> int:
        return self.probs.shape[1]

    def validate(self) -> None:
        for k, p in enumerate(self.probs):
            try:
                check_probs(p)
            except ValueError as exc:
                raise ValueError(f"instance {self.ids[k]}: {exc}") from None


@dataclass
class LossReport:
    total: float
    per_set: dict
    grads: Optional[np.ndarray] = None
    per_pair: Optional[list] = None

    def to_dict(self, ids: Optional[Sequence[str]] = None) -> dict:
        out = {"total": self.total, "per_set": {k: self.per_set[k] for k in SET_NAMES}}
        if self.per_pair is not None:
            name = (lambda k: ids[k]) if ids is not None else (lambda k: k)
            out["per_pair"] = [[name(m), name(n), s, v] for m, n, s, v in self.per_pair]
        if self.grads is not None:
            out["grads"] = self.grads.tolist()
        return out


def loss_terms(triples, encoding, pairs: str = "unordered", na_index: Optional[int] = None,
               literal_co: bool = False, strict_empty: bool = False, gates: Optional[PairGates] = None):
    """Active local-loss terms as ``(set name, first indices, second indices)``.

    Coherent tso terms are oriented: the first instance is the one whose
    subject is the other's object. Sets with no rules are skipped unless
    ``strict_empty``.
    """
    if gates is None:
        gates = pair_gates(triples, pairs, na_index, literal_co)
    terms = []
    for name in SET_NAMES:
        if encoding.is_empty(name) and not strict_empty:
            continue
        col = gates.column(name)
        if name == "tso" and encoding.kind == "coherent":
            fwd, bwd = col & gates.tso_fwd, col & gates.tso_bwd
            terms.append((name, gates.m[fwd], gates.n[fwd]))
            terms.append((name, gates.n[bwd], gates.m[bwd]))
        else:
            terms.append((name, gates.m[col], gates.n[col]))
    return terms


def batch_constraint_loss(batch: Batch, encoding, eps: float = DEFAULT_EPS, want_grads: bool = True,
                          pairs: str = "unordered", na_index: Optional[int] = None,
                          strict_empty: bool = False, literal_co: bool = False,
                          per_pair: bool = False, validate: bool = True) -> LossReport:
    """Sum of gated local losses over all instance pairs of ``batch``.

    ``pairs`` selects unordered ``m < n`` pairs (default), ordered pairs
    ``m != n``, or all ordered pairs including ``m == n``. Instances whose
    gold relation is ``na_index`` take part in no pair.
    """
    if not isinstance(encoding, (CoherentVectors, SemanticRuleSets)):
        raise TypeError("encoding must be CoherentVectors or SemanticRuleSets")
    if encoding.n_relations != batch.n_relations:
        raise ValueError(f"dimension mismatch: encoding has {encoding.n_relations} relations, "
                         f"batch has {batch.n_relations}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if validate:
        batch.validate()
    probs = batch.probs
    per_set = dict.fromkeys(SET_NAMES, 0.0)
    grads = np.zeros_like(probs) if want_grads else None
    records = []
    for name, a, b in loss_terms(batch.triples, encoding, pairs, na_index, literal_co, strict_empty):
        if len(a) == 0:
            continue
        vals, ga, gb = local_values_and_grads(encoding, name, probs[a], probs[b], eps)
        per_set[name] += float(np.sum(vals))
        if want_grads:
            np.add.at(grads, a, ga)
            np.add.at(grads, b, gb)
        if per_pair:
            records.extend(zip(np.minimum(a, b).tolist() if pairs == "unordered" else a.tolist(),
                               np.maximum(a, b).tolist() if pairs == "unordered" else b.tolist(),
                               [name] * len(a), vals.tolist()))
    total = 0.0
    for name in SET_NAMES:
        total += per_set[name]
    if per_pair:
        order = {s: k for k, s in enumerate(SET_NAMES)}
        records.sort(key=lambda rec: (rec[0], rec[1], order[rec[2]]))
    return LossReport(total=total, per_set=per_set, grads=grads, per_pair=records if per_pair else None)


def grad_check(batch: Batch, encoding, eps: float = DEFAULT_EPS, h: float = 1e-5, **kwargs) -> float:
    """Max relative error between analytic and central-difference gradients.

    Both gradients are projected onto the simplex tangent space (row mean
    removed). The error of each coordinate is scaled by the largest
    projected gradient magnitude of the batch.
    """
    report = batch_constraint_loss(batch, encoding, eps=eps, want_grads=True, **kwargs)
    analytic = report.grads
    numeric = np.zeros_like(analytic)
    terms = loss_terms(batch.triples, encoding, kwargs.get("pairs", "unordered"), kwargs.get("na_index"),
                       kwargs.get("literal_co", False), kwargs.get("strict_empty", False))
    r = batch.n_relations
    steps = np.vstack([np.eye(r) * h, -np.eye(r) * h])
    probs = batch.probs
    for k in range(len(batch)):
        # only terms touching instance k move when its probabilities move
        perturbed = probs[k] + steps
        acc = np.zeros(2 * r)
        for name, a, b in terms:
            for i, j in zip(a[(a == k) | (b == k)], b[(a == k) | (b == k)]):
                pa = perturbed if i == k else np.broadcast_to(probs[i], perturbed.shape)
                pb = perturbed if j == k else np.broadcast_to(probs[j], perturbed.shape)
                acc += local_values_and_grads(encoding, name, pa, pb, eps)[0]
        numeric[k] = (acc[:r] - acc[r:]) / (2 * h)
    a = analytic - analytic.mean(axis=1, keepdims=True)
    f = numeric - numeric.mean(axis=1, keepdims=True)
    scale = max(np.abs(a).max(), np.abs(f).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - f).max() / scale)
