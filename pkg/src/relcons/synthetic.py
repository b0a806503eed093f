"""Synthetic relation-extraction data with planted type/cardinality structure.

Entities are partitioned into type classes. Every relation gets a fixed
subject type, object type and cardinality regime, and its triples are
built so that the constraints implied by that construction are exactly
what mining recovers: each relation covers more than half of the
entities of its argument types (so any two relations sharing an
argument type share an entity), and the regime decides whether an
object can have several subjects and/or a subject several objects.

Instances are KB triples drawn with replacement. Features are
``[relation one-hot ; subject-type one-hot ; object-type one-hot]``
plus Gaussian noise. A ``label_noise`` fraction of observed labels is
flipped: in ``systematic`` mode to a fixed confusable relation with a
different type signature (how distant supervision mislabels), in
``uniform`` mode to any other relation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .kb import RelationVocabulary, Triple, TripleStore
from .mining import ConstraintSets

REGIMES = ("one_to_one", "many_to_one", "one_to_many", "many_to_many")


@dataclass
class SyntheticDatasetSpec:
    n_relations: int = 12
    n_entities_per_type: int = 40
    n_type_classes: int = 4
    n_instances: int = 2400
    label_noise: float = 0.0
    feature_noise: float = 0.0
    type_feature_noise: Optional[float] = None
    noise_mode: str = "systematic"
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("n_relations", "n_entities_per_type", "n_type_classes", "n_instances"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must be in [0, 1]")
        if self.feature_noise < 0 or (self.type_feature_noise is not None and self.type_feature_noise < 0):
            raise ValueError("feature noise must be non-negative")
        if self.noise_mode not in ("systematic", "uniform"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")
        if self.n_entities_per_type < 3:
            raise ValueError("infeasible spec: need at least 3 entities per type class")
        if self.label_noise > 0 and self.n_relations < 2:
            raise ValueError("infeasible spec: label noise needs at least 2 relations")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    vocab: RelationVocabulary
    store: TripleStore
    planted: ConstraintSets
    entity_pairs: list            # (subj, obj) per instance
    true_labels: np.ndarray
    labels: np.ndarray            # observed, possibly flipped
    features: np.ndarray
    relation_types: list = field(default_factory=list)   # (subject type, object type, regime)

    @property
    def instances(self) -> list:
        """(observed gold triple, feature vector) per instance."""
        return [(t, x) for t, x in zip(self.triples(), self.features)]

    def triples(self, labels=None) -> list:
        labels = self.labels if labels is None else labels
        return [Triple(s, int(r), o) for (s, o), r in zip(self.entity_pairs, labels)]

    def split(self):
        """Deterministic (train, test) index arrays; instances are already in random order."""
        n = len(self.labels)
        n_test = int(round(n * self.spec.test_fraction))
        idx = np.arange(n)
        return idx[: n - n_test], idx[n - n_test:]


def _entity(t: int, k: int) -> str:
    return f"T{t}_e{k}"


def _relation_triples(rng, regime, s_type, o_type, n):
    half = n // 2 + 1
    subj_pool = [_entity(s_type, k) for k in rng.permutation(n)]
    obj_pool = [_entity(o_type, k) for k in rng.permutation(n)]
    pairs = set()
    if regime == "one_to_one":
        pairs = set(zip(subj_pool, obj_pool))
    elif regime == "many_to_one":
        objs = obj_pool[:half]
        for k, s in enumerate(subj_pool):
            # first |objs| subjects make the map onto, the rest land anywhere
            o = objs[k] if k < len(objs) else objs[rng.integers(len(objs))]
            pairs.add((s, o))
    elif regime == "one_to_many":
        subs = subj_pool[:half]
        for k, o in enumerate(obj_pool):
            s = subs[k] if k < len(subs) else subs[rng.integers(len(subs))]
            pairs.add((s, o))
    else:
        subs, objs = subj_pool[:half], obj_pool[:half]
        for s in subs:
            for k in rng.choice(len(objs), size=2, replace=False):
                pairs.add((s, objs[k]))
        covered = {o for _, o in pairs}
        for o in objs:
            if o not in covered:
                pairs.add((subs[rng.integers(len(subs))], o))
    return sorted(pairs)


def _confusers(rng, relation_types) -> np.ndarray:
    """For each relation, a fixed wrong label, preferably with a different type signature."""
    n = len(relation_types)
    out = np.arange(n)
    for r, (s, o, _) in enumerate(relation_types):
        others = [k for k in range(n) if k != r]
        if not others:
            continue
        clash = [k for k in others if relation_types[k][:2] != (s, o)]
        pool = clash or others
        out[r] = pool[rng.integers(len(pool))]
    return out


def planted_constraints(relation_types, n_relations) -> ConstraintSets:
    ts, to, tso, cs, co = set(), set(), set(), set(), set()
    for i, (si, oi, regime) in enumerate(relation_types):
        if regime in ("many_to_one", "many_to_many"):
            cs.add(i)
        if regime in ("one_to_many", "many_to_many"):
            co.add(i)
        for j, (sj, oj, _) in enumerate(relation_types):
            if i <= j and si == sj:
                ts.add((i, j))
            if i <= j and oi == oj:
                to.add((i, j))
            if si == oj:
                tso.add((i, j))
    return ConstraintSets(n_relations, ts=ts, to=to, tso=tso, cs=cs, co=co)


def generate_synthetic(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    n_rel, n_types, n_ent = spec.n_relations, spec.n_type_classes, spec.n_entities_per_type
    vocab = RelationVocabulary([f"rel{r:02d}" for r in range(n_rel)])

    relation_types = []
    for r in range(n_rel):
        s_type, o_type = (int(x) for x in rng.integers(n_types, size=2))
        relation_types.append((s_type, o_type, REGIMES[r % len(REGIMES)]))

    triples = []
    for r, (s_type, o_type, regime) in enumerate(relation_types):
        triples.extend(Triple(s, r, o) for s, o in _relation_triples(rng, regime, s_type, o_type, n_ent))
    store = TripleStore.from_triples(triples, n_rel)
    by_rel = [store.relation_triples(r) for r in range(n_rel)]

    true_labels = rng.integers(n_rel, size=spec.n_instances)
    entity_pairs = []
    for r in true_labels:
        t = by_rel[r][rng.integers(len(by_rel[r]))]
        entity_pairs.append((t.subj, t.obj))

    confuser = _confusers(rng, relation_types)
    labels = true_labels.copy()
    flip = rng.random(spec.n_instances) < spec.label_noise
    if n_rel > 1:
        shift = rng.integers(1, n_rel, size=spec.n_instances)
        if spec.noise_mode == "uniform":
            labels[flip] = (true_labels[flip] + shift[flip]) % n_rel
        else:
            labels[flip] = confuser[true_labels[flip]]

    s_types = np.array([relation_types[r][0] for r in true_labels])
    o_types = np.array([relation_types[r][1] for r in true_labels])
    eye_r, eye_t = np.eye(n_rel), np.eye(n_types)
    rel_part = eye_r[true_labels] + spec.feature_noise * rng.standard_normal((spec.n_instances, n_rel))
    type_noise = spec.feature_noise if spec.type_feature_noise is None else spec.type_feature_noise
    type_part = np.hstack([eye_t[s_types], eye_t[o_types]])
    type_part = type_part + type_noise * rng.standard_normal(type_part.shape)
    features = np.hstack([rel_part, type_part])

    return SyntheticDataset(
        spec=spec, vocab=vocab, store=store,
        planted=planted_constraints(relation_types, n_rel),
        entity_pairs=entity_pairs, true_labels=true_labels, labels=labels,
        features=features, relation_types=relation_types,
    )
