"""Binary encodings of constraint sets consumed by the loss kernels.

``CoherentVectors`` packs each set into one indicator array (an |R| x |R|
matrix for type sets, a length-|R| vector for cardinality sets).
``SemanticRuleSets`` turns every rule into its own length-|R| vector:
two ones for a type rule ``(i, j)``, a single one for a diagonal type
rule or a cardinality rule.

Rule order is canonical: type rules sorted by ``(min(i, j), max(i, j))``,
cardinality rules by index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mining import CARD_SETS, SET_NAMES, TYPE_SETS, ConstraintSets


@dataclass(frozen=True)
class CoherentVectors:
    ts: np.ndarray
    to: np.ndarray
    tso: np.ndarray
    cs: np.ndarray
    co: np.ndarray

    kind = "coherent"

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def n_relations(self) -> int:
        return self.cs.shape[0]

    def is_empty(self, name: str) -> bool:
        return not self[name].any()


@dataclass(frozen=True)
class SemanticRuleSets:
    """One ``(n_rules, |R|)`` 0/1 array per set."""

    ts: np.ndarray
    to: np.ndarray
    tso: np.ndarray
    cs: np.ndarray
    co: np.ndarray

    kind = "semantic"

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def n_relations(self) -> int:
        return self.cs.shape[1]

    def is_empty(self, name: str) -> bool:
        return self[name].shape[0] == 0


def build_coherent(sets: ConstraintSets, vocab=None) -> CoherentVectors:
    n = sets.n_relations
    if vocab is not None and len(vocab) != n:
        raise ValueError("vocabulary size does not match constraint sets")
    mats = {}
    for name in TYPE_SETS:
        m = np.zeros((n, n), dtype=np.float64)
        for i, j in sets[name]:
            m[i, j] = 1.0
            if name != "tso":
                m[j, i] = 1.0
        mats[name] = m
    for name in CARD_SETS:
        v = np.zeros(n, dtype=np.float64)
        v[sorted(sets[name])] = 1.0
        mats[name] = v
    for arr in mats.values():
        arr.setflags(write=False)
    return CoherentVectors(**mats)


def type_rule_pairs(sets: ConstraintSets, name: str) -> list[tuple[int, int]]:
    """Distinct rules of a type set in canonical order; tso pairs collapse to unordered."""
    return sorted({(min(i, j), max(i, j)) for i, j in sets[name]})


def build_semantic(sets: ConstraintSets, vocab=None) -> SemanticRuleSets:
    n = sets.n_relations
    if vocab is not None and len(vocab) != n:
        raise ValueError("vocabulary size does not match constraint sets")
    out = {}
    for name in TYPE_SETS:
        pairs = type_rule_pairs(sets, name)
        u = np.zeros((len(pairs), n), dtype=np.float64)
        for k, (i, j) in enumerate(pairs):
            u[k, i] = u[k, j] = 1.0
        out[name] = u
    for name in CARD_SETS:
        rels = sorted(sets[name])
        u = np.zeros((len(rels), n), dtype=np.float64)
        u[np.arange(len(rels)), rels] = 1.0
        out[name] = u
    for arr in out.values():
        arr.setflags(write=False)
    return SemanticRuleSets(**out)


def build_encoding(sets: ConstraintSets, method: str):
    if method == "coherent":
        return build_coherent(sets)
    if method == "semantic":
        return build_semantic(sets)
    raise ValueError(f"unknown encoding method {method!r}")


def dump_encoding(encoding) -> str:
    """Human-readable 0/1 rows per set, one rule (or matrix row) per line."""
    lines = [f"# {encoding.kind}"]
    for name in SET_NAMES:
        arr = np.atleast_2d(encoding[name])
        lines.append(f"[{name}] {arr.shape[0]} rows")
        lines.extend("".join("1" if x else "0" for x in row) for row in arr)
    return "\n".join(lines) + "\n"
