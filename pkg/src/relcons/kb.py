"""Knowledge-base triples, relation vocabulary and lookup indices."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

NA_NAME = "NA"


class FormatError(ValueError):
    """Malformed input file; carries the offending path and line number."""

    def __init__(self, path, lineno: Optional[int], message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


class RelationVocabulary:
    """Ordered relation names with dense indices and an optional NA label."""

    def __init__(self, relations: Sequence[str] = (), na_index: Optional[int] = None):
        self._relations: list[str] = []
        self._index: dict[str, int] = {}
        self.na_index: Optional[int] = None
        for name in relations:
            self.add(name)
        if na_index is not None:
            if not 0 <= na_index < len(self._relations):
                raise ValueError(f"na_index {na_index} out of range for {len(self)} relations")
            self.na_index = na_index

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "RelationVocabulary":
        """Build a vocabulary; a relation literally named ``NA`` becomes the NA label."""
        return cls(names)

    def add(self, name: str) -> int:
        if not isinstance(name, str) or not name:
            raise ValueError("relation names must be non-empty strings")
        if name in self._index:
            raise ValueError(f"duplicate relation name {name!r}")
        self._index[name] = len(self._relations)
        self._relations.append(name)
        if name == NA_NAME and self.na_index is None:
            self.na_index = self._index[name]
        return self._index[name]

    @property
    def relations(self) -> list[str]:
        return list(self._relations)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def name(self, idx: int) -> str:
        self.check(idx)
        return self._relations[idx]

    def check(self, idx: int) -> None:
        if not isinstance(idx, (int,)) or isinstance(idx, bool) or not 0 <= idx < len(self._relations):
            raise IndexError(f"invalid relation index {idx!r} (vocabulary size {len(self)})")

    def is_na(self, idx: Optional[int]) -> bool:
        return idx is not None and self.na_index is not None and idx == self.na_index

    def __contains__(self, name) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._relations)

    def __iter__(self) -> Iterator[str]:
        return iter(self._relations)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelationVocabulary):
            return NotImplemented
        return self._relations == other._relations and self.na_index == other.na_index

    def __repr__(self) -> str:
        return f"RelationVocabulary({self._relations!r}, na_index={self.na_index})"


@dataclass(frozen=True, order=True)
class Triple:
    """A subject-relation-object fact.

    ``rel`` is ``None`` only for prediction records whose gold relation is
    unknown; such triples still carry the entity pair used for gating.
    """

    subj: str
    rel: Optional[int]
    obj: str

    def __post_init__(self):
        if not self.subj or not self.obj:
            raise ValueError("subject and object must be non-empty")


@dataclass
class TripleStore:
    """Deduplicated triple set with per-relation and per-entity indices."""

    triples: frozenset = field(default_factory=frozenset)
    n_relations: int = 0

    def __post_init__(self):
        self.triples = frozenset(self.triples)
        for t in self.triples:
            if t.rel is None or not 0 <= t.rel < self.n_relations:
                raise ValueError(f"triple {t} has invalid relation for {self.n_relations} relations")
        self._build()

    def _build(self) -> None:
        subj = defaultdict(set)
        obj = defaultdict(set)
        by_subject = defaultdict(set)
        by_object = defaultdict(set)
        for t in self.triples:
            subj[t.rel].add(t.subj)
            obj[t.rel].add(t.obj)
            by_subject[t.subj].add(t)
            by_object[t.obj].add(t)
        self._subjects = {r: frozenset(s) for r, s in subj.items()}
        self._objects = {r: frozenset(s) for r, s in obj.items()}
        self.by_subject = {e: frozenset(s) for e, s in by_subject.items()}
        self.by_object = {e: frozenset(s) for e, s in by_object.items()}

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], n_relations: int) -> "TripleStore":
        return cls(frozenset(triples), n_relations)

    def relation_triples(self, rel: int) -> list[Triple]:
        self._check(rel)
        return sorted(t for t in self.triples if t.rel == rel)

    def subjects_of(self, rel: int) -> frozenset:
        self._check(rel)
        return self._subjects.get(rel, frozenset())

    def objects_of(self, rel: int) -> frozenset:
        self._check(rel)
        return self._objects.get(rel, frozenset())

    def _check(self, rel) -> None:
        if isinstance(rel, bool) or not isinstance(rel, int) or not 0 <= rel < self.n_relations:
            raise IndexError(f"invalid relation index {rel!r}")

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self.triples))


def subjects_of(store: TripleStore, rel: int) -> frozenset:
    return store.subjects_of(rel)


def objects_of(store: TripleStore, rel: int) -> frozenset:
    return store.objects_of(rel)


def load_vocabulary(path) -> RelationVocabulary:
    """Read one relation name per line; line order gives the index."""
    path = Path(path)
    names = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            name = line.rstrip("\n").rstrip("\r")
            if not name:
                raise FormatError(path, lineno, "empty relation name")
            if name in names:
                raise FormatError(path, lineno, f"duplicate relation name {name!r}")
            names.append(name)
    if not names:
        raise FormatError(path, None, "empty vocabulary file")
    return RelationVocabulary.from_names(names)


def save_vocabulary(vocab: RelationVocabulary, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for name in vocab:
            fh.write(name + "\n")


def load_triples(path, vocab_policy: str = "grow",
                 vocab: Optional[RelationVocabulary] = None) -> tuple[TripleStore, RelationVocabulary]:
    """Parse a tab-separated ``subj<TAB>relation<TAB>obj`` file.

    With ``vocab_policy="strict"`` every relation must already be in
    ``vocab``; with ``"grow"`` unseen relations are appended in first-seen
    order (starting from ``vocab`` if given, else empty).
    """
    if vocab_policy not in ("strict", "grow"):
        raise ValueError(f"unknown vocab_policy {vocab_policy!r}")
    if vocab_policy == "strict" and vocab is None:
        raise ValueError("strict vocab_policy requires a vocabulary")
    path = Path(path)
    vocab = RelationVocabulary(vocab.relations, vocab.na_index) if vocab is not None else RelationVocabulary()
    triples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            subj, rel, obj = fields
            if not subj or not rel or not obj:
                raise FormatError(path, lineno, "empty field")
            if rel not in vocab:
                if vocab_policy == "strict":
                    raise FormatError(path, lineno, f"unknown relation {rel!r}")
                vocab.add(rel)
            triples.append(Triple(subj, vocab.index(rel), obj))
    if not triples:
        raise FormatError(path, None, "no triples in file")
    return TripleStore.from_triples(triples, len(vocab)), vocab


def save_triples(store: TripleStore, vocab: RelationVocabulary, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for t in store:
            fh.write(f"{t.subj}\t{vocab.name(t.rel)}\t{t.obj}\n")
