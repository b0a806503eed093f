import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcons.encoding import build_coherent, build_semantic
from relcons.indicators import indicators
from relcons.kb import RelationVocabulary, Triple
from relcons.loss import (Batch, batch_constraint_loss, coherent_card_local, coherent_type_local,
                          grad_check, local_value_and_grad, semantic_local, semantic_score_card,
                          semantic_score_type)
from relcons.mining import CARD_SETS, SET_NAMES, ConstraintSets

from conftest import random_probs

EPS = 1e-12
U4 = [0.25] * 4
HALF = [0.5, 0.5, 0.0, 0.0]


def onehot(i, n=4):
    v = [0.0] * n
    v[i] = 1.0
    return v


# --- independent oracle: explicit loops over relation indices -------------


def oracle_coherent_type(pm, pn, v):
    return sum(v[i][j] * pm[i] * pn[j] for i in range(len(pm)) for j in range(len(pn)))


def oracle_coherent_card(pm, pn, v):
    return sum(v[i] * pm[i] * pn[i] for i in range(len(pm)))


def oracle_rule(x, u):
    out = 1.0
    for xi, ui in zip(x, u):
        out *= xi if ui else 1.0 - xi
    return out


def oracle_semantic(pm, pn, rules, card):
    if card:
        x = [a * b for a, b in zip(pm, pn)]
    else:
        x = [a + b - a * b for a, b in zip(pm, pn)]
    return sum(oracle_rule(x, u) for u in rules)


def oracle_batch(triples, probs, sets, method):
    """Sum of gated local losses over unordered pairs, from the set definitions."""
    enc = build_coherent(sets) if method == "coherent" else build_semantic(sets)
    total = 0.0
    for m in range(len(triples)):
        for n in range(m + 1, len(triples)):
            flags = indicators(triples[m], triples[n])
            for name in SET_NAMES:
                if not getattr(flags, name):
                    continue
                v = enc[name].tolist()
                pm, pn = probs[m].tolist(), probs[n].tolist()
                if not np.any(enc[name]):
                    continue  # a set with no rules is gated off
                if method == "semantic":
                    total += -math.log(max(oracle_semantic(pm, pn, v, name in CARD_SETS), EPS))
                elif name in CARD_SETS:
                    total += -math.log(max(oracle_coherent_card(pm, pn, v), EPS))
                elif name == "tso":
                    if triples[m].subj == triples[n].obj:
                        total += -math.log(max(oracle_coherent_type(pm, pn, v), EPS))
                    if triples[m].obj == triples[n].subj:
                        total += -math.log(max(oracle_coherent_type(pn, pm, v), EPS))
                else:
                    total += -math.log(max(oracle_coherent_type(pm, pn, v), EPS))
    return total


def random_case(rng, size, r, n_ent=4):
    triples = [Triple(f"e{rng.integers(n_ent)}", int(rng.integers(r)), f"e{rng.integers(n_ent)}")
               for _ in range(size)]
    pairs = [(i, j) for i in range(r) for j in range(r) if rng.random() < 0.4]
    sets = ConstraintSets(r, ts=pairs[: len(pairs) // 3], to=pairs[len(pairs) // 3: 2 * len(pairs) // 3],
                          tso=pairs, cs={i for i in range(r) if rng.random() < 0.5},
                          co={i for i in range(r) if rng.random() < 0.5})
    return triples, random_probs(rng, size, r), sets


# --- local losses -----------------------------------------------------------


class TestCoherentLocal:
    def test_exact_match_is_zero(self):
        v = np.zeros((4, 4))
        v[0, 1] = 1
        assert coherent_type_local(onehot(0), onehot(1), v, 1) == 0.0

    def test_gated_off(self):
        assert coherent_type_local(U4, U4, np.zeros((4, 4)), 0) == 0.0
        assert coherent_card_local(U4, U4, np.zeros(4), 0) == 0.0

    def test_uniform_case(self):
        v = np.zeros((4, 4))
        v[0, 1] = v[1, 0] = 1
        assert oracle_coherent_type(U4, U4, v) == pytest.approx(0.125, abs=1e-15)
        assert coherent_type_local(U4, U4, v, 1) == pytest.approx(-math.log(0.125), abs=1e-9)
        assert coherent_type_local(U4, U4, v, 1) == pytest.approx(2.0794415416798357, abs=1e-9)

    def test_card_one_hot(self):
        assert coherent_card_local(onehot(0), onehot(0), [1, 0, 0, 0], 1) == 0.0

    def test_card_half(self):
        assert oracle_coherent_card(HALF, HALF, [1, 0, 0, 0]) == 0.25
        assert coherent_card_local(HALF, HALF, [1, 0, 0, 0], 1) == pytest.approx(-math.log(0.25), abs=1e-9)

    def test_zero_vector_clamps(self):
        assert coherent_card_local(HALF, HALF, np.zeros(4), 1, eps=EPS) == pytest.approx(-math.log(EPS))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            coherent_type_local(U4, U4, np.zeros((3, 3)), 1)


class TestSemanticScores:
    def test_type_exact_match(self):
        assert semantic_score_type(onehot(0), onehot(1), [1, 1, 0, 0]) == 1.0

    def test_type_disjoint(self):
        assert semantic_score_type(onehot(2), onehot(3), [1, 1, 0, 0]) == 0.0

    def test_type_half(self):
        assert oracle_semantic(HALF, HALF, [[1, 1, 0, 0]], False) == 0.5625
        assert semantic_score_type(HALF, HALF, [1, 1, 0, 0]) == pytest.approx(0.5625, abs=1e-12)

    def test_card_exact(self):
        assert semantic_score_card(onehot(0), onehot(0), [1, 0, 0, 0]) == 1.0

    def test_card_exclusive(self):
        assert semantic_score_card(onehot(0), onehot(0), [0, 1, 0, 0]) == 0.0

    def test_card_half(self):
        assert oracle_semantic(HALF, HALF, [[1, 0, 0, 0]], True) == 0.1875
        assert semantic_score_card(HALF, HALF, [1, 0, 0, 0]) == pytest.approx(0.1875, abs=1e-12)


class TestSemanticLocal:
    def test_single_rule_match(self):
        assert semantic_local(onehot(0), onehot(1), [[1, 1, 0, 0]], "type", 1) == 0.0

    def test_two_card_rules(self):
        rules = [[1, 0, 0, 0], [0, 1, 0, 0]]
        assert oracle_semantic(HALF, HALF, rules, True) == 0.375
        assert semantic_local(HALF, HALF, rules, "card", 1) == pytest.approx(-math.log(0.375), abs=1e-9)

    def test_no_rule_matched_clamps(self):
        assert semantic_local(onehot(2), onehot(3), [[1, 1, 0, 0]], "type", 1) == pytest.approx(-math.log(EPS))

    def test_empty_rule_set_gated(self):
        assert semantic_local(U4, U4, [], "card", 1) == 0.0
        assert semantic_local(U4, U4, [], "card", 1, strict_empty=True) == pytest.approx(-math.log(EPS))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            semantic_local(U4, U4, [], "other", 1)


class TestLocalProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**31 - 1))
    def test_scores_bounded_and_losses_non_negative(self, r, seed):
        rng = np.random.default_rng(seed)
        pm, pn = rng.dirichlet(np.ones(r), size=2)
        u = (rng.random(r) < 0.5).astype(float)
        v = (rng.random((r, r)) < 0.5).astype(float)
        for s in (semantic_score_type(pm, pn, u), semantic_score_card(pm, pn, u)):
            assert -1e-15 <= s <= 1 + 1e-15
        assert oracle_coherent_type(pm, pn, v) <= 1 + 1e-12
        assert coherent_type_local(pm, pn, v, 1) >= 0
        assert semantic_local(pm, pn, [u], "type", 1) >= 0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**31 - 1))
    def test_symmetric_in_the_pair(self, r, seed):
        rng = np.random.default_rng(seed)
        pm, pn = rng.dirichlet(np.ones(r), size=2)
        v = (rng.random((r, r)) < 0.5).astype(float)
        v = np.maximum(v, v.T)
        rules = (rng.random((3, r)) < 0.5).astype(float)
        assert coherent_type_local(pm, pn, v, 1) == pytest.approx(coherent_type_local(pn, pm, v, 1), rel=1e-12)
        assert coherent_card_local(pm, pn, v[0], 1) == pytest.approx(coherent_card_local(pn, pm, v[0], 1), rel=1e-12)
        for kind in ("type", "card"):
            assert semantic_local(pm, pn, rules, kind, 1) == pytest.approx(semantic_local(pn, pm, rules, kind, 1), rel=1e-12)

    @pytest.mark.parametrize("r", [2, 4, 8])
    def test_single_rule_one_hot_agreement(self, r):
        # with one rule and one-hot inputs both encodings give 0 or -log(eps)
        for i in range(r):
            for j in range(r):
                sets = ConstraintSets(r, tso={(0, 1)})
                coh = build_coherent(sets).tso
                sem = build_semantic(sets).tso
                a = coherent_type_local(onehot(i, r), onehot(j, r), coh, 1)
                b = semantic_local(onehot(i, r), onehot(j, r), sem, "type", 1)
                if (i, j) == (0, 1):
                    assert a == b == 0.0
                elif (i, j) != (1, 0):
                    assert a == pytest.approx(b)

    @pytest.mark.parametrize("r", range(2, 9))
    def test_mutual_exclusivity(self, r):
        eye = np.eye(r)
        for a in range(r):
            for b in range(r):
                if a != b:
                    assert semantic_score_card(eye[a], eye[a], eye[b]) == 0.0


# --- batches ----------------------------------------------------------------


def fig2_case():
    """Three instances in the spirit of the framework figure: two share a subject, two an object."""
    vocab = RelationVocabulary(["almaMater", "city", "country", "knownFor"])
    sets = ConstraintSets(4, ts={(0, 1)}, cs={0})
    triples = [Triple("e1", 0, "u1"), Triple("e1", 1, "c1"), Triple("e2", 0, "u1")]
    return vocab, sets, triples, np.full((3, 4), 0.25)


class TestBatchLoss:
    def test_single_instance(self):
        sets = ConstraintSets(4, ts={(0, 1)})
        rep = batch_constraint_loss(Batch([Triple("a", 0, "b")], [U4]), build_coherent(sets))
        assert rep.total == 0.0 and not rep.grads.any()

    def test_unrelated_pair(self):
        sets = ConstraintSets(4, ts={(0, 1)})
        batch = Batch([Triple("a", 0, "b"), Triple("c", 1, "d")], [U4, HALF])
        assert batch_constraint_loss(batch, build_semantic(sets)).total == 0.0

    @pytest.mark.parametrize("method", ["coherent", "semantic"])
    def test_figure_setting_matches_oracle(self, method):
        _, sets, triples, probs = fig2_case()
        enc = build_coherent(sets) if method == "coherent" else build_semantic(sets)
        rep = batch_constraint_loss(Batch(triples, probs), enc)
        assert rep.total == pytest.approx(oracle_batch(triples, probs, sets, method), abs=1e-9)
        assert rep.total == pytest.approx(sum(rep.per_set.values()), abs=1e-12)

    @pytest.mark.parametrize("method", ["coherent", "semantic"])
    @pytest.mark.parametrize("seed", range(15))
    def test_random_batches_match_oracle(self, method, seed):
        rng = np.random.default_rng(seed)
        triples, probs, sets = random_case(rng, int(rng.integers(2, 9)), int(rng.integers(2, 6)))
        enc = build_coherent(sets) if method == "coherent" else build_semantic(sets)
        rep = batch_constraint_loss(Batch(triples, probs), enc)
        assert rep.total == pytest.approx(oracle_batch(triples, probs, sets, method), rel=1e-10, abs=1e-9)

    def test_pair_modes_scale(self):
        rng = np.random.default_rng(4)
        triples, probs, sets = random_case(rng, 6, 4)
        enc = build_semantic(sets)
        one = batch_constraint_loss(Batch(triples, probs), enc).total
        two = batch_constraint_loss(Batch(triples, probs), enc, pairs="ordered").total
        assert two == pytest.approx(2 * one, rel=1e-12)
        assert batch_constraint_loss(Batch(triples, probs), enc, pairs="all").total >= two

    def test_na_instances_are_skipped(self):
        sets = ConstraintSets(3, ts={(1, 2)}, na_index=0)
        triples = [Triple("a", 0, "b"), Triple("a", 1, "c")]
        rep = batch_constraint_loss(Batch(triples, [[1 / 3] * 3] * 2), build_coherent(sets), na_index=0)
        assert rep.total == 0.0

    def test_per_pair_records(self):
        _, sets, triples, probs = fig2_case()
        rep = batch_constraint_loss(Batch(triples, probs), build_semantic(sets), per_pair=True)
        assert sum(v for *_, v in rep.per_pair) == pytest.approx(rep.total)
        keys = [(m, n) for m, n, _, _ in rep.per_pair]
        assert keys == sorted(keys) and all(m < n for m, n in keys)
        out = rep.to_dict(["x", "y", "z"])
        assert out["per_pair"][0][0] in "xyz"

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        triples, probs, sets = random_case(rng, 30, 5, n_ent=6)
        a = batch_constraint_loss(Batch(triples, probs), build_semantic(sets))
        b = batch_constraint_loss(Batch(triples, probs), build_semantic(sets))
        assert a.total == b.total and np.array_equal(a.grads, b.grads)

    def test_rejects_bad_probabilities(self):
        sets = ConstraintSets(2)
        with pytest.raises(ValueError, match="sum"):
            batch_constraint_loss(Batch([Triple("a", 0, "b")], [[0.7, 0.7]]), build_coherent(sets))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            batch_constraint_loss(Batch([Triple("a", 0, "b")], [U4]), build_coherent(ConstraintSets(3)))


class TestGradients:
    def test_closed_form_single_pair(self):
        rng = np.random.default_rng(0)
        pm, pn = random_probs(rng, 2, 4)
        v = (rng.random((4, 4)) < 0.5).astype(float)
        v = np.maximum(v, v.T)
        sets = ConstraintSets(4, ts={(i, j) for i in range(4) for j in range(4) if v[i, j]})
        v = build_coherent(sets).ts
        denom = sum(v[i, j] * pm[i] * pn[j] for i in range(4) for j in range(4))
        hand = np.array([-sum(v[i, j] * pn[j] for j in range(4)) / denom for i in range(4)])
        _, ga, _ = local_value_and_grad(build_coherent(sets), "ts", pm, pn)
        np.testing.assert_allclose(ga, hand, rtol=1e-12)
        rep = batch_constraint_loss(Batch([Triple("a", 0, "b"), Triple("a", 1, "c")], [pm, pn]),
                                    build_coherent(ConstraintSets(4, ts=sets.ts)))
        np.testing.assert_allclose(rep.grads[0], hand, rtol=1e-12)

    def test_all_gated_gives_zero(self):
        batch = Batch([Triple("a", 0, "b"), Triple("c", 1, "d")], [U4, HALF])
        rep = batch_constraint_loss(batch, build_coherent(ConstraintSets(4)))
        assert not rep.grads.any()
        assert grad_check(batch, build_coherent(ConstraintSets(4))) == 0.0

    @pytest.mark.parametrize("method", ["coherent", "semantic"])
    @pytest.mark.parametrize("pairs", ["unordered", "ordered", "all"])
    def test_finite_differences(self, method, pairs):
        rng = np.random.default_rng(21)
        for _ in range(5):
            triples, probs, sets = random_case(rng, int(rng.integers(2, 10)), int(rng.choice([4, 8])))
            enc = build_coherent(sets) if method == "coherent" else build_semantic(sets)
            assert grad_check(Batch(triples, probs), enc, pairs=pairs) < 1e-6

    @pytest.mark.parametrize("method", ["coherent", "semantic"])
    def test_strict_empty_adds_constant(self, method):
        # different subjects, same object: cs gate is on but cs has no rules
        triples = [Triple("a", 0, "b"), Triple("c", 1, "b")]
        sets = ConstraintSets(2)
        enc = build_coherent(sets) if method == "coherent" else build_semantic(sets)
        batch = Batch(triples, [[0.5, 0.5], [0.5, 0.5]])
        assert batch_constraint_loss(batch, enc).per_set["cs"] == 0.0
        strict = batch_constraint_loss(batch, enc, strict_empty=True)
        assert strict.per_set["cs"] == pytest.approx(-math.log(EPS))
        assert not np.any(strict.grads - batch_constraint_loss(batch, enc).grads)
