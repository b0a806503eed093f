"""Counting constraint violations among predictions and repairing them.

A pair of predictions violates a set only when the set's gate is active
for the two gold entity pairs:

* ts / to: the predicted relation pair is not in the set (diagonal pairs
  are always allowed);
* tso: neither orientation of the predicted pair is in the set;
* cs / co: both predictions are the same relation and that relation is
  not in the set.

Repair maximises the summed log-probability of the chosen relations
subject to zero violations, exactly (branch and bound) for small
connected groups and greedily for large ones.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .indicators import PairGates, pair_gates
from .kb import Triple
from .mining import SET_NAMES, ConstraintSets

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-300


@dataclass
class PredictionItem:
    id: str
    gold: Triple
    probs: np.ndarray
    predicted: Optional[int] = None
    flagged: bool = False

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.predicted is None:
            self.predicted = int(np.argmax(self.probs))


@dataclass
class PredictionSet:
    items: list

    @classmethod
    def from_arrays(cls, triples, probs, ids=None, predicted=None) -> "PredictionSet":
        probs = np.asarray(probs, dtype=np.float64)
        ids = ids if ids is not None else [str(k) for k in range(len(triples))]
        items = [PredictionItem(ids[k], triples[k], probs[k],
                                None if predicted is None else int(predicted[k]))
                 for k in range(len(triples))]
        return cls(items)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def triples(self) -> list:
        return [it.gold for it in self.items]

    @property
    def predicted(self) -> np.ndarray:
        return np.array([it.predicted for it in self.items], dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array([it.probs for it in self.items])

    def log_prob(self) -> float:
        return float(sum(np.log(max(it.probs[it.predicted], LOG_FLOOR)) for it in self.items))


@dataclass
class ViolationReport:
    per_set: dict = field(default_factory=lambda: dict.fromkeys(SET_NAMES, 0))

    @property
    def total(self) -> int:
        return sum(self.per_set.values())

    def to_dict(self) -> dict:
        out = {k: self.per_set[k] for k in SET_NAMES}
        out["total"] = self.total
        return out


def allowed_tables(sets: ConstraintSets) -> dict:
    """Boolean |R| x |R| tables: entry [i, j] says predictions (i, j) are allowed by the set."""
    n = sets.n_relations
    tables = {}
    for name in ("ts", "to"):
        t = np.zeros((n, n), dtype=bool)
        for i, j in sets[name]:
            t[i, j] = t[j, i] = True
        np.fill_diagonal(t, True)
        tables[name] = t
    t = np.zeros((n, n), dtype=bool)
    for i, j in sets.tso:
        t[i, j] = True
    tables["tso"] = t | t.T
    for name in ("cs", "co"):
        member = np.zeros(n, dtype=bool)
        member[sorted(sets[name])] = True
        t = ~np.eye(n, dtype=bool)
        t[member, member] = True
        tables[name] = t
    return tables


def _violation_masks(gates: PairGates, pred, tables) -> dict:
    """Per-set boolean masks over gated pairs marking violating ones."""
    pm, pn = pred[gates.m], pred[gates.n]
    return {name: gates.column(name) & ~tables[name][pm, pn] for name in SET_NAMES}


def count_violations(preds: PredictionSet, sets: ConstraintSets, literal_co: bool = False) -> ViolationReport:
    """Per-set counts of contradictory unordered prediction pairs."""
    tables = allowed_tables(sets)
    gates = pair_gates(preds.triples, "unordered", sets.na_index, literal_co)
    masks = _violation_masks(gates, preds.predicted, tables)
    return ViolationReport({name: int(masks[name].sum()) for name in SET_NAMES})


def connected_groups(triples) -> list[list[int]]:
    """Instance indices grouped by shared entities, each group sorted, groups by first member."""
    parent = list(range(len(triples)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    for k, t in enumerate(triples):
        for e in (t.subj, t.obj):
            if e in owner:
                a, b = find(owner[e]), find(k)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[e] = k
    groups = {}
    for k in range(len(triples)):
        groups.setdefault(find(k), []).append(k)
    return [groups[r] for r in sorted(groups)]


def _union_groups(size: int, m, n) -> list[list[int]]:
    parent = np.arange(size)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(m.tolist(), n.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for k in range(size):
        groups.setdefault(find(k), []).append(k)
    return [groups[r] for r in sorted(groups)]


class _Group:
    """Pairwise violation-count tables for one group of interacting instances."""

    def __init__(self, members, logp, edges):
        self.members = members
        self.logp = logp[members]
        local = {g: k for k, g in enumerate(members)}
        self.neighbors = [[] for _ in members]
        for g, h, cnt in edges:
            m, n = local[g], local[h]
            self.neighbors[m].append((n, cnt))
            self.neighbors[n].append((m, cnt.T))

    def local_violations(self, k, assign) -> np.ndarray:
        """Violations of member ``k`` for every candidate relation, others fixed."""
        v = np.zeros(self.logp.shape[1], dtype=np.int64)
        for j, cnt in self.neighbors[k]:
            v += cnt[:, assign[j]]
        return v

    def total(self, assign) -> int:
        return sum(int(cnt[assign[k], assign[j]])
                   for k, nb in enumerate(self.neighbors) for j, cnt in nb if k < j)


def _branch_and_bound(group: _Group, node_limit: Optional[int]):
    """Best zero-violation assignment, ``None`` if infeasible; raises on node budget."""
    size = group.logp.shape[0]
    order = sorted(range(size), key=lambda k: (-len(group.neighbors[k]), k))
    rank = {k: d for d, k in enumerate(order)}
    domains = [np.argsort(-group.logp[k], kind="stable") for k in order]
    best_each = np.array([group.logp[k].max() for k in order])
    suffix = np.concatenate([np.cumsum(best_each[::-1])[::-1], [0.0]])
    # neighbours already placed when a member is reached
    earlier = [[(j, cnt) for j, cnt in group.neighbors[k] if rank[j] < rank[k]] for k in order]

    assign = [-1] * size
    best = {"value": -np.inf, "assign": None}
    nodes = 0

    def search(depth, value):
        nonlocal nodes
        if depth == size:
            if value > best["value"]:
                best["value"] = value
                best["assign"] = list(assign)
            return
        k = order[depth]
        for r in domains[depth]:
            nodes += 1
            if node_limit is not None and nodes > node_limit:
                raise _NodeLimit
            v = value + group.logp[k, r]
            if v + suffix[depth + 1] <= best["value"]:
                # domain is sorted, later options are no better
                break
            if any(cnt[r, assign[j]] for j, cnt in earlier[depth]):
                continue
            assign[k] = int(r)
            search(depth + 1, v)
            assign[k] = -1

    search(0, 0.0)
    return best["assign"]


class _NodeLimit(Exception):
    pass


def _greedy(group: _Group, assign: list) -> list:
    assign = list(assign)
    while True:
        best_key, best_move = None, None
        for k in range(len(assign)):
            viol = group.local_violations(k, assign)
            cur = viol[assign[k]]
            if cur == 0:
                continue
            for r in range(len(viol)):
                if r == assign[k] or viol[r] >= cur:
                    continue
                cost = group.logp[k, assign[k]] - group.logp[k, r]
                # fully consistent moves first, then largest reduction, then cheapest
                key = (viol[r] != 0, -(cur - viol[r]) if viol[r] else 0, cost, k, r)
                if best_key is None or key < best_key:
                    best_key, best_move = key, (k, r)
        if best_move is None:
            return assign
        k, r = best_move
        assign[k] = r


def _repair_group(group: _Group, group_limit: int, node_limit: Optional[int]):
    argmax = [int(np.argmax(row)) for row in group.logp]
    if group.total(argmax) == 0:
        return argmax, "unchanged", False
    if len(group.members) <= group_limit:
        try:
            found = _branch_and_bound(group, node_limit)
        except _NodeLimit:
            log.warning("node limit hit on group of %d, using greedy repair", len(group.members))
            return _greedy(group, argmax), "greedy", False
        if found is None:
            return argmax, "infeasible", True
        return found, "exact", False
    return _greedy(group, argmax), "greedy", False


@dataclass
class RepairStats:
    groups: int = 0
    exact: int = 0
    greedy: int = 0
    infeasible: int = 0
    violations_before: int = 0
    violations_after: int = 0

    @property
    def removed(self) -> int:
        return self.violations_before - self.violations_after

    def to_dict(self) -> dict:
        return {"groups": self.groups, "exact": self.exact, "greedy": self.greedy,
                "infeasible": self.infeasible, "violations_before": self.violations_before,
                "violations_after": self.violations_after, "removed": self.removed}


def repair_predictions(preds: PredictionSet, sets: ConstraintSets, group_limit: int = 12,
                       literal_co: bool = False, threads: int = 1,
                       node_limit: Optional[int] = 2_000_000, stats: Optional[RepairStats] = None
                       ) -> PredictionSet:
    """Reassign relations to remove violations while keeping log-probability high.

    Starts from argmax predictions. Groups of connected instances with at
    most ``group_limit`` members are solved exactly; a group with no
    violation-free assignment keeps its argmax and is flagged. Larger
    groups are repaired greedily. Pass a ``RepairStats`` to collect counts.
    """
    tables = allowed_tables(sets)
    triples = preds.triples
    logp = np.log(np.maximum(preds.probs, LOG_FLOOR))
    gates = pair_gates(triples, "unordered", sets.na_index, literal_co)
    # only pairs under a set that forbids something can ever be violated
    restrictive = {name: not tables[name].all() for name in SET_NAMES}
    live = np.zeros(len(gates), dtype=bool)
    for name in SET_NAMES:
        if restrictive[name]:
            live |= gates.column(name)
    live = np.flatnonzero(live)
    # entity-sharing groups, merged along gated pairs (these differ only under literal_co)
    chain_m, chain_n = [gates.m[live]], [gates.n[live]]
    for members in connected_groups(triples):
        chain_m.append(np.array(members[:-1], dtype=np.int64))
        chain_n.append(np.array(members[1:], dtype=np.int64))
    members_of = _union_groups(len(triples), np.concatenate(chain_m), np.concatenate(chain_n))
    owner = {g: k for k, members in enumerate(members_of) for g in members}
    forbidden = {name: (~tables[name]).astype(np.int64) for name in SET_NAMES}
    by_group = {}
    for e in live.tolist():
        cnt = sum(forbidden[name] for name in SET_NAMES if gates.flags[e, SET_NAMES.index(name)])
        g, h = int(gates.m[e]), int(gates.n[e])
        by_group.setdefault(owner[g], []).append((g, h, cnt))
    groups = [_Group(members, logp, by_group.get(k, [])) for k, members in enumerate(members_of)]

    def work(group):
        return _repair_group(group, group_limit, node_limit)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    items = [replace(it, predicted=int(np.argmax(it.probs)), flagged=False) for it in preds.items]
    if stats is not None:
        stats.groups = len(groups)
        stats.violations_before = count_violations(PredictionSet(items), sets, literal_co).total
    for group, (assign, how, flagged) in zip(groups, results):
        for k, g in enumerate(group.members):
            items[g].predicted = int(assign[k])
            items[g].flagged = flagged
        if stats is not None and how in ("exact", "greedy", "infeasible"):
            setattr(stats, how, getattr(stats, how) + 1)
    out = PredictionSet(items)
    if stats is not None:
        stats.violations_after = count_violations(out, sets, literal_co).total
    return out
