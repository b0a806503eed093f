"""Gates deciding which constraint sets apply to a pair of gold triples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .kb import RelationVocabulary, Triple
from .mining import SET_NAMES


class IndicatorFlags(NamedTuple):
    ts: int = 0
    to: int = 0
    tso: int = 0
    cs: int = 0
    co: int = 0

    def active(self) -> bool:
        return any(self)


NO_FLAGS = IndicatorFlags()


def indicators(t_m: Triple, t_n: Triple, vocab: Optional[RelationVocabulary] = None,
               literal_co: bool = False) -> IndicatorFlags:
    """Indicator bits for the pair ``(t_m, t_n)``.

    ``co`` fires on same subject / different objects. ``literal_co=True``
    instead uses the complementary assignment (1 everywhere except that
    case), kept only for fidelity experiments. A gold NA relation on
    either side turns every bit off.
    """
    if vocab is not None and (vocab.is_na(t_m.rel) or vocab.is_na(t_n.rel)):
        return NO_FLAGS
    same_subj = t_m.subj == t_n.subj
    same_obj = t_m.obj == t_n.obj
    co = same_subj and not same_obj
    if literal_co:
        co = not co
    return IndicatorFlags(
        ts=int(same_subj),
        to=int(same_obj),
        tso=int(t_m.subj == t_n.obj or t_m.obj == t_n.subj),
        cs=int(not same_subj and same_obj),
        co=int(co),
    )


def tso_orientations(t_m: Triple, t_n: Triple) -> tuple[bool, bool]:
    """Which directed readings of the tso gate hold.

    First flag: ``subj_m == obj_n`` (m's relation on the subject side);
    second: ``obj_m == subj_n`` (n's relation on the subject side).
    """
    return t_m.subj == t_n.obj, t_m.obj == t_n.subj


@dataclass
class PairGates:
    """Vectorised indicator bits for every gated pair of a triple list.

    ``m``/``n`` list the pairs in lexicographic order; ``flags`` is a
    boolean (pairs x 5) array in ``SET_NAMES`` order; ``tso_fwd`` /
    ``tso_bwd`` are the two directed readings of the tso gate.
    """

    m: np.ndarray
    n: np.ndarray
    flags: np.ndarray
    tso_fwd: np.ndarray
    tso_bwd: np.ndarray

    def __len__(self) -> int:
        return len(self.m)

    def column(self, name: str) -> np.ndarray:
        return self.flags[:, SET_NAMES.index(name)]

    def restrict(self, keep: np.ndarray) -> "PairGates":
        return PairGates(self.m[keep], self.n[keep], self.flags[keep],
                         self.tso_fwd[keep], self.tso_bwd[keep])


def pair_gates(triples, mode: str = "unordered", na_index: Optional[int] = None,
               literal_co: bool = False, chunk: int = 1024) -> PairGates:
    """Indicator bits for all pairs with at least one active gate.

    ``mode`` is ``unordered`` (m < n), ``ordered`` (m != n) or ``all``
    (every ordered pair, self pairs included).
    """
    if mode not in ("unordered", "ordered", "all"):
        raise ValueError(f"unknown pair mode {mode!r}")
    ids = {}
    subj = np.array([ids.setdefault(t.subj, len(ids)) for t in triples], dtype=np.int64)
    obj = np.array([ids.setdefault(t.obj, len(ids)) for t in triples], dtype=np.int64)
    live = np.array([na_index is None or t.rel != na_index for t in triples], dtype=bool)
    size = len(triples)
    cols = np.arange(size)
    out_m, out_n, out_f, out_fwd, out_bwd = [], [], [], [], []
    for start in range(0, size, chunk):
        rows = np.arange(start, min(start + chunk, size))
        if mode == "unordered":
            keep = cols[None, :] > rows[:, None]
        elif mode == "ordered":
            keep = cols[None, :] != rows[:, None]
        else:
            keep = np.ones((len(rows), size), dtype=bool)
        keep &= live[rows, None] & live[None, :]
        if not literal_co:
            # every gate needs a shared entity, except the complemented co gate
            keep &= ((subj[rows, None] == subj[None, :]) | (obj[rows, None] == obj[None, :])
                     | (subj[rows, None] == obj[None, :]) | (obj[rows, None] == subj[None, :]))
        r_idx, c_idx = np.nonzero(keep)
        m, n = rows[r_idx], c_idx
        ss, oo = subj[m] == subj[n], obj[m] == obj[n]
        so, os_ = subj[m] == obj[n], obj[m] == subj[n]
        co = ss & ~oo
        if literal_co:
            co = ~co
        flags = np.stack([ss, oo, so | os_, ~ss & oo, co], axis=-1)
        hit = flags.any(axis=-1)
        out_m.append(m[hit])
        out_n.append(n[hit])
        out_f.append(flags[hit])
        out_fwd.append(so[hit])
        out_bwd.append(os_[hit])
    if not out_m:
        empty = np.zeros(0, dtype=np.int64)
        return PairGates(empty, empty, np.zeros((0, len(SET_NAMES)), dtype=bool),
                         np.zeros(0, dtype=bool), np.zeros(0, dtype=bool))
    return PairGates(np.concatenate(out_m), np.concatenate(out_n), np.concatenate(out_f),
                     np.concatenate(out_fwd), np.concatenate(out_bwd))
