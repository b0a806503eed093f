import numpy as np
import pytest

from relcons.mining import mine_constraints
from relcons.synthetic import REGIMES, SyntheticDatasetSpec, generate_synthetic
from relcons.training import TrainConfig, train


class TestGenerator:
    @pytest.mark.parametrize("seed", range(4))
    def test_mined_sets_contain_planted(self, seed):
        ds = generate_synthetic(SyntheticDatasetSpec(seed=seed, n_instances=100))
        mined = mine_constraints(ds.store, ds.vocab, min_overlap=1)
        assert mined.issuperset(ds.planted)

    def test_mined_equals_planted(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_relations=16, n_type_classes=5, seed=9, n_instances=50))
        assert mine_constraints(ds.store, ds.vocab) == ds.planted

    def test_deterministic(self):
        spec = SyntheticDatasetSpec(label_noise=0.2, feature_noise=0.4, seed=3, n_instances=300)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a.store.triples == b.store.triples
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_noise_free_is_separable(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_instances=600, seed=1))
        cfg = TrainConfig(epochs=30, batch_size=50, learning_rate=0.05, optimizer="adam")
        model, _ = train(ds.features, ds.triples(), ds.planted, cfg)
        assert np.mean(model.predict(ds.features) == ds.labels) == 1.0

    def test_regimes_shape_cardinality(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_relations=8, seed=2, n_instances=10))
        for r, (_, _, regime) in enumerate(ds.relation_types):
            assert (r in ds.planted.cs) == (regime in ("many_to_one", "many_to_many"))
            assert (r in ds.planted.co) == (regime in ("one_to_many", "many_to_many"))
        assert {reg for *_, reg in ds.relation_types} == set(REGIMES)

    @pytest.mark.parametrize("mode", ["systematic", "uniform"])
    def test_label_noise_rate(self, mode):
        ds = generate_synthetic(SyntheticDatasetSpec(n_instances=4000, label_noise=0.25, noise_mode=mode, seed=0))
        rate = np.mean(ds.labels != ds.true_labels)
        assert 0.22 < rate < 0.28

    def test_systematic_noise_uses_one_confuser(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_instances=3000, label_noise=0.3, seed=5))
        for r in range(ds.spec.n_relations):
            wrong = set(ds.labels[(ds.true_labels == r) & (ds.labels != r)].tolist())
            assert len(wrong) <= 1

    def test_split(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_instances=100, test_fraction=0.25))
        train_idx, test_idx = ds.split()
        assert len(train_idx) == 75 and len(test_idx) == 25
        assert set(train_idx).isdisjoint(test_idx)

    def test_instances(self):
        ds = generate_synthetic(SyntheticDatasetSpec(n_instances=10))
        t, x = ds.instances[0]
        assert t.rel == ds.labels[0] and x.shape == (ds.features.shape[1],)

    @pytest.mark.parametrize("kw", [dict(n_entities_per_type=2), dict(n_relations=1, label_noise=0.1),
                                    dict(label_noise=1.5), dict(noise_mode="other"), dict(n_instances=0)])
    def test_infeasible_specs(self, kw):
        with pytest.raises(ValueError):
            SyntheticDatasetSpec(**kw)
