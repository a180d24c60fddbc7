import itertools

import numpy as np
import pytest

from fhbsel.cluster import (
    KMeansPseudoLabeler,
    PseudoLabels,
    elbow_knee,
    kmeans_fit,
    load_kscan_csv,
    map_clusters_to_classes,
    save_kscan_csv,
    select_k,
    silhouette_score,
)
from fhbsel.hsi_core import ClassLabel
from fhbsel.preprocess import FeatureMatrix


def fm(x):
    return FeatureMatrix.from_array(np.asarray(x, dtype=np.float64))


def brute_silhouette(x, labels):
    n = len(x)
    ks = sorted(set(labels))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue
        dist = lambda j: float(np.sqrt(sum((x[i][d] - x[j][d]) ** 2 for d in range(len(x[i])))))
        a = sum(dist(j) for j in own) / len(own)
        b = min(
            sum(dist(j) for j in range(n) if labels[j] == c) / sum(1 for j in range(n) if labels[j] == c)
            for c in ks if c != labels[i]
        )
        m = max(a, b)
        total += (b - a) / m if m > 0 else 0.0
    return total / n


class TestKMeans:
    def test_separable_pair(self):
        model, labels = kmeans_fit(fm([[0, 0], [10, 10]]), 2)
        assert model.inertia == 0
        assert sorted(map(tuple, model.centroids)) == [(0, 0), (10, 10)]
        assert labels.assignments[0] != labels.assignments[1]

    def test_k1_closed_form(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        model, _ = kmeans_fit(fm(x), 1)
        np.testing.assert_allclose(model.centroids[0], x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(model.inertia, x.var(axis=0).sum() * 20, rtol=1e-12)

    def test_lloyd_fixed_point(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            x = rng.normal(size=(8, 2))
            model, labels = kmeans_fit(fm(x), 2, seed=trial)
            a = labels.assignments
            for i, dest in itertools.product(range(8), range(2)):
                if dest == a[i] or np.sum(a == a[i]) == 1:
                    continue
                b = a.copy()
                b[i] = dest
                inertia = sum(((x[b == j] - x[b == j].mean(axis=0)) ** 2).sum() for j in range(2))
                assert inertia >= model.inertia - 1e-12

    def test_inertia_non_increasing_500_instances(self):
        rng = np.random.default_rng(2)
        for i in range(500):
            n = int(rng.integers(3, 40))
            x = rng.normal(size=(n, int(rng.integers(1, 5)))) * rng.uniform(0.1, 10)
            k = int(rng.integers(1, min(n, 6) + 1))
            model, labels = kmeans_fit(fm(x), k, seed=i, n_init=1)
            h = np.array(model.inertia_history)
            assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
            assert labels.counts().sum() == n

    def test_final_assignment_is_argmin(self):
        x = np.random.default_rng(3).normal(size=(30, 2))
        model, labels = kmeans_fit(fm(x), 3)
        d = ((x[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(d.argmin(axis=1), labels.assignments)

    def test_duplicate_points_tie_break(self):
        model, labels = kmeans_fit(fm([[1.0], [1.0], [1.0]]), 2, n_init=1)
        assert labels.counts().sum() == 3
        assert model.inertia == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            kmeans_fit(fm([[0.0], [1.0]]), 3)
        with pytest.raises(ValueError):
            kmeans_fit(fm([[0.0], [1.0]]), 0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        x = np.vstack([rng.normal(0, 1, (15, 3)), rng.normal(4, 1, (15, 3))])
        ids = tuple(f"id{i:03d}" for i in range(30))
        _, base = kmeans_fit(FeatureMatrix(x, ids), 2, seed=9)
        perm = rng.permutation(30)
        _, moved = kmeans_fit(FeatureMatrix(x[perm], tuple(ids[i] for i in perm)), 2, seed=9)
        back = np.empty(30, dtype=int)
        back[perm] = moved.assignments
        same = np.array_equal(back, base.assignments) or np.array_equal(1 - back, base.assignments)
        assert same


class TestSilhouette:
    def test_tight_pairs(self):
        x = [[0, 0], [0, 0.1], [10, 10], [10, 10.1]]
        assert silhouette_score(fm(x), PseudoLabels([0, 0, 1, 1], 2)) > 0.9

    def test_singletons(self):
        assert silhouette_score(fm([[0.0], [1.0]]), PseudoLabels([0, 1], 2)) == 0

    def test_swapped_labels_negative(self):
        x = [[0, 0], [0, 0.1], [10, 10], [10, 10.1]]
        assert silhouette_score(fm(x), PseudoLabels([0, 1, 0, 1], 2)) < 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            k = int(rng.integers(2, min(n, 5) + 1))
            labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
            rng.shuffle(labels)
            x = rng.normal(size=(n, int(rng.integers(1, 4))))
            got = silhouette_score(fm(x), PseudoLabels(labels, k))
            want = brute_silhouette(x.tolist(), labels.tolist())
            assert abs(got - want) <= 1e-10
            assert -1 <= got <= 1

    def test_errors(self):
        with pytest.raises(ValueError):
            silhouette_score(fm([[0.0], [1.0]]), PseudoLabels([0, 0], 1))
        with pytest.raises(ValueError):
            silhouette_score(fm([[0.0], [1.0]]), PseudoLabels([0, 0], 2))


class TestElbow:
    def test_sharp(self):
        assert elbow_knee([1, 2, 3, 4, 5], [100, 20, 15, 12, 10]) == 2

    def test_linear_tie(self):
        assert elbow_knee([1, 2, 3, 4, 5], [50, 40, 30, 20, 10]) == 2

    def test_later_knee(self):
        assert elbow_knee([1, 2, 3, 4, 5], [50, 40, 10, 9, 8.5]) == 3

    def test_too_few(self):
        with pytest.raises(ValueError):
            elbow_knee([1, 2], [3, 1])


class TestSelectK:
    def test_three_blobs(self):
        rng = np.random.default_rng(6)
        centers = np.array([[0, 0], [20, 0], [0, 20]])
        x = np.vstack([c + rng.normal(size=(20, 2)) for c in centers])
        res = select_k(fm(x), 2, 6, seed=1)
        assert res.chosen_k == 3
        assert res.k_values == (1, 2, 3, 4, 5, 6)
        assert np.isnan(res.silhouettes[0])
        assert all(-1 <= s <= 1 for s in res.silhouettes[1:])

    def test_two_classes_agree(self):
        rng = np.random.default_rng(7)
        x = np.vstack([rng.normal(0, 1, (30, 4)), rng.normal(8, 1, (30, 4))])
        res = select_k(fm(x), seed=3)
        assert res.chosen_k == 2 and res.elbow_k == 2 and res.agreement

    def test_deterministic(self):
        x = np.random.default_rng(8).normal(size=(40, 3))
        a, b = select_k(fm(x), seed=5), select_k(fm(x), seed=5)
        assert a.inertias == b.inertias
        assert np.array_equal(np.array(a.silhouettes), np.array(b.silhouettes), equal_nan=True)
        assert a.chosen_k == b.chosen_k

    def test_bad_range(self):
        x = fm(np.zeros((5, 1)))
        for lo, hi in [(1, 4), (3, 3), (2, 6)]:
            with pytest.raises(ValueError):
                select_k(x, lo, hi)

    def test_kscan_csv_round_trip(self, tmp_path):
        x = np.random.default_rng(9).normal(size=(20, 2))
        res = select_k(fm(x), 2, 4)
        save_kscan_csv(res, tmp_path / "k.csv")
        rows = load_kscan_csv(tmp_path / "k.csv")
        assert [r[0] for r in rows] == list(res.k_values)
        assert [r[1] for r in rows] == list(res.inertias)
        assert np.isnan(rows[0][2]) and rows[1][2] == res.silhouettes[1]


class TestClassMapping:
    def test_higher_reference_is_mild(self):
        x = fm([[0.8], [0.8], [0.4], [0.4]])
        named = map_clusters_to_classes(PseudoLabels([0, 0, 1, 1], 2), x, 0)
        assert named.as_classes() == [ClassLabel.MILD] * 2 + [ClassLabel.SERIOUS] * 2

    def test_swap_indices(self):
        x = fm([[0.8], [0.8], [0.4], [0.4]])
        named = map_clusters_to_classes(PseudoLabels([1, 1, 0, 0], 2), x, 0)
        assert named.as_classes() == [ClassLabel.MILD] * 2 + [ClassLabel.SERIOUS] * 2
        assert np.array_equal(named.assignments, [1, 1, 0, 0])

    def test_tie_goes_to_lower_index(self):
        named = map_clusters_to_classes(PseudoLabels([0, 1], 2), fm([[0.5], [0.5]]), 0)
        assert named.class_map[0] is ClassLabel.MILD

    def test_requires_two_clusters(self):
        with pytest.raises(ValueError):
            map_clusters_to_classes(PseudoLabels([0, 1, 2], 3), fm([[0.0], [1.0], [2.0]]), 0)


def test_pseudo_labels_invariants():
    with pytest.raises(ValueError):
        PseudoLabels([0, 2], 2)
    with pytest.raises(ValueError):
        PseudoLabels([0, 1], 2, {0: ClassLabel.MILD, 1: ClassLabel.MILD})


def test_estimator_wrapper():
    rng = np.random.default_rng(10)
    x = np.vstack([rng.normal(0, 0.3, (15, 2)), rng.normal(5, 0.3, (15, 2))])
    est = KMeansPseudoLabeler(seed=2).fit(x)
    assert est.n_clusters_ == 2
    assert np.array_equal(est.predict(x), est.labels_)
    assert est.get_params()["k_max"] == 8
    fixed = KMeansPseudoLabeler(n_clusters=3).fit(x)
    assert fixed.n_clusters_ == 3 and fixed.scan_ is None
