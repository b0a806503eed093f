"""Mining type and cardinality constraint sets from a triple store."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .kb import FormatError, RelationVocabulary, TripleStore

SET_NAMES = ("ts", "to", "tso", "cs", "co")
TYPE_SETS = ("ts", "to", "tso")
CARD_SETS = ("cs", "co")


def _unordered(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i <= j else (j, i)


@dataclass
class ConstraintSets:
    """The five positive-rule sets over relation indices.

    ``ts`` and ``to`` hold unordered pairs stored as ``(min, max)``; the
    diagonal ``(r, r)`` of every non-NA relation is always a member.
    ``tso`` holds ordered pairs ``(i, j)``: subject type of ``r_i`` equals
    object type of ``r_j``. ``cs``/``co`` hold relation indices.
    """

    n_relations: int
    ts: set = field(default_factory=set)
    to: set = field(default_factory=set)
    tso: set = field(default_factory=set)
    cs: set = field(default_factory=set)
    co: set = field(default_factory=set)
    na_index: Optional[int] = None

    def __post_init__(self):
        self.ts = {_unordered(*p) for p in self.ts}
        self.to = {_unordered(*p) for p in self.to}
        self.tso = {tuple(p) for p in self.tso}
        self.cs = set(self.cs)
        self.co = set(self.co)
        for r in range(self.n_relations):
            if r != self.na_index:
                self.ts.add((r, r))
                self.to.add((r, r))
        self.validate()

    @classmethod
    def empty(cls, vocab: RelationVocabulary) -> "ConstraintSets":
        return cls(len(vocab), na_index=vocab.na_index)

    def validate(self) -> None:
        n = self.n_relations
        for name in TYPE_SETS:
            for i, j in getattr(self, name):
                for r in (i, j):
                    if not 0 <= r < n:
                        raise ValueError(f"{name}: relation index {r} out of range")
                    if r == self.na_index:
                        raise ValueError(f"{name}: NA relation may not appear in constraints")
        for name in CARD_SETS:
            for r in getattr(self, name):
                if not 0 <= r < n:
                    raise ValueError(f"{name}: relation index {r} out of range")
                if r == self.na_index:
                    raise ValueError(f"{name}: NA relation may not appear in constraints")

    def __getitem__(self, name: str) -> set:
        if name not in SET_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    # membership tests used by inference and tests

    def allows_type(self, name: str, ri: int, rj: int) -> bool:
        if name == "tso":
            return (ri, rj) in self.tso
        return _unordered(ri, rj) in self[name]

    def off_diagonal(self, name: str) -> set:
        return {p for p in self[name] if p[0] != p[1]} if name in ("ts", "to") else set(self[name])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstraintSets):
            return NotImplemented
        return (self.n_relations == other.n_relations and self.na_index == other.na_index
                and all(self[s] == other[s] for s in SET_NAMES))

    def issuperset(self, other: "ConstraintSets") -> bool:
        return all(self[s] >= other[s] for s in SET_NAMES)

    def sizes(self) -> dict:
        return {s: len(self.off_diagonal(s)) for s in SET_NAMES}


def _relations(store: TripleStore, vocab: RelationVocabulary) -> list[int]:
    if store.n_relations != len(vocab):
        raise ValueError("store and vocabulary disagree on the number of relations")
    return [r for r in range(len(vocab)) if r != vocab.na_index]


def mine_type_constraints(store: TripleStore, vocab: RelationVocabulary, min_overlap: int = 1):
    """Relation pairs whose argument sets share at least ``min_overlap`` entities.

    Returns ``(ts, to, tso)`` as sets of index pairs; ``ts``/``to`` are
    unordered and include diagonals, ``tso`` is ordered.
    """
    if len(store) == 0:
        raise ValueError("cannot mine an empty store")
    if min_overlap < 1:
        raise ValueError("min_overlap must be >= 1")
    rels = _relations(store, vocab)
    subj = {r: store.subjects_of(r) for r in rels}
    obj = {r: store.objects_of(r) for r in rels}
    ts, to, tso = set(), set(), set()
    for a, ri in enumerate(rels):
        ts.add((ri, ri))
        to.add((ri, ri))
        for rj in rels[a + 1:]:
            if len(subj[ri] & subj[rj]) >= min_overlap:
                ts.add((ri, rj))
            if len(obj[ri] & obj[rj]) >= min_overlap:
                to.add((ri, rj))
        for rj in rels:
            if len(subj[ri] & obj[rj]) >= min_overlap:
                tso.add((ri, rj))
    return ts, to, tso


def mine_cardinality_constraints(store: TripleStore, vocab: RelationVocabulary, min_count: int = 1):
    """Relations with multiple subjects per object (``cs``) or multiple objects per subject (``co``).

    A relation qualifies when at least ``min_count`` distinct objects
    (subjects) each have two or more distinct subjects (objects).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    rels = set(_relations(store, vocab))
    subjects_per_obj = defaultdict(lambda: defaultdict(set))
    objects_per_subj = defaultdict(lambda: defaultdict(set))
    for t in store.triples:
        if t.rel in rels:
            subjects_per_obj[t.rel][t.obj].add(t.subj)
            objects_per_subj[t.rel][t.subj].add(t.obj)
    cs = {r for r, groups in subjects_per_obj.items()
          if sum(len(s) >= 2 for s in groups.values()) >= min_count}
    co = {r for r, groups in objects_per_subj.items()
          if sum(len(o) >= 2 for o in groups.values()) >= min_count}
    return cs, co


def mine_constraints(store: TripleStore, vocab: RelationVocabulary,
                     min_overlap: int = 1, min_count: int = 1) -> ConstraintSets:
    ts, to, tso = mine_type_constraints(store, vocab, min_overlap)
    cs, co = mine_cardinality_constraints(store, vocab, min_count)
    return ConstraintSets(len(vocab), ts=ts, to=to, tso=tso, cs=cs, co=co, na_index=vocab.na_index)


def constraints_to_dict(sets: ConstraintSets, vocab: RelationVocabulary) -> dict:
    name = vocab.name
    out = {"relations": vocab.relations}
    for s in TYPE_SETS:
        out[s] = [[name(i), name(j)] for i, j in sorted(sets.off_diagonal(s))]
    for s in CARD_SETS:
        out[s] = [name(r) for r in sorted(sets[s])]
    return out


def save_constraints(sets: ConstraintSets, path, vocab: RelationVocabulary) -> None:
    """Write the JSON constraint file; diagonal ts/to pairs are implicit."""
    text = json.dumps(constraints_to_dict(sets, vocab), indent=1, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def constraints_from_dict(data: dict, vocab: Optional[RelationVocabulary] = None, source="<dict>"):
    if not isinstance(data, dict):
        raise FormatError(source, None, "constraint file must hold a JSON object")
    if vocab is None:
        if "relations" not in data:
            raise FormatError(source, None, "no vocabulary given and file has no 'relations' array")
        try:
            vocab = RelationVocabulary.from_names(data["relations"])
        except (TypeError, ValueError) as exc:
            raise FormatError(source, None, f"bad 'relations' array: {exc}") from None

    def idx(name):
        if not isinstance(name, str) or name not in vocab:
            raise FormatError(source, None, f"unknown relation {name!r}")
        return vocab.index(name)

    kw = {}
    for s in TYPE_SETS:
        pairs = data.get(s, [])
        if not isinstance(pairs, list):
            raise FormatError(source, None, f"'{s}' must be an array")
        acc = set()
        for p in pairs:
            if not isinstance(p, list) or len(p) != 2:
                raise FormatError(source, None, f"'{s}' entries must be [relation, relation]")
            acc.add((idx(p[0]), idx(p[1])))
        kw[s] = acc
    for s in CARD_SETS:
        names = data.get(s, [])
        if not isinstance(names, list):
            raise FormatError(source, None, f"'{s}' must be an array")
        kw[s] = {idx(n) for n in names}
    try:
        sets = ConstraintSets(len(vocab), na_index=vocab.na_index, **kw)
    except ValueError as exc:
        raise FormatError(source, None, str(exc)) from None
    return sets, vocab


def load_constraints(path, vocab: Optional[RelationVocabulary] = None):
    """Read a constraint file; returns ``(sets, vocab)``.

    Without ``vocab`` the file's own ``relations`` array defines indices.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    return constraints_from_dict(data, vocab, source=path)
