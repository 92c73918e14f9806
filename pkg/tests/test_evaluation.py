import numpy as np
import pytest

from oracles import cosine_similarity_oracle, kid_oracle

from stampgan.domain import EmptyMaskError, MaskTensor
from stampgan.evaluation import (
    polynomial_kernel,
    InsufficientSamplesError,
    KidReport,
    extract_features,
    kid,
    nn_mask_retrieve,
    subset_protocol,
)
from stampgan.synthetic import synth_sample


class TestKid:
    def test_identical_sets_estimator_identity(self):
        # for X == Y the unbiased estimator does NOT vanish: the within-set
        # terms exclude the diagonal while the cross term keeps it
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 8))
        n = x.shape[0]
        k = polynomial_kernel(x, x)
        expected = 2.0 * (k.sum() - np.trace(k)) / (n * (n - 1)) - 2.0 * k.mean()
        assert kid(x, x.copy()) == pytest.approx(expected, rel=1e-12)

    def test_bruteforce_equivalence_small_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(2, 11))
            m = int(rng.integers(2, 11))
            d = int(rng.integers(2, 7))
            x = rng.normal(size=(n, d))
            y = rng.normal(size=(m, d))
            assert abs(kid(x, y) - kid_oracle(x, y)) <= 1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(12, 5)), rng.normal(size=(9, 5))
        assert kid(x, y) == pytest.approx(kid(y, x), rel=1e-12)

    def test_translation_sensitivity_documented(self):
        # polynomial kernel is not translation invariant: shifting both sets
        # by the same vector changes the score
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
        shift = np.full(4, 2.0)
        assert kid(x, y) != pytest.approx(kid(x + shift, y + shift), rel=1e-6)

    def test_same_distribution_small_score(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(400, 6))
        y = rng.normal(size=(400, 6))
        scores = [kid(x[rng.choice(400, 50, replace=False)],
                      y[rng.choice(400, 50, replace=False)]) for _ in range(30)]
        se = np.std(scores, ddof=1)
        assert abs(np.mean(scores)) < 3 * se + 1e-9

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            kid(np.zeros((1, 4)), np.zeros((5, 4)))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            kid(np.zeros((4, 3)), np.zeros((4, 5)))


class TestSubsetProtocol:
    def _feats(self, seed, n=40, d=6, loc=0.0):
        rng = np.random.default_rng(seed)
        return rng.normal(loc=loc, size=(n, d))

    def test_single_system_count_best_full(self):
        report = subset_protocol(self._feats(0), {"only": self._feats(1)},
                                 n_subsets=10, subset_size=8, seed=3)
        assert report.count_best == [1.0]

    def test_real_copy_wins_every_subset(self):
        real = self._feats(0)
        report = subset_protocol(real, {"copy": real.copy(),
                                        "shifted": self._feats(1, loc=2.0)},
                                 n_subsets=20, subset_size=10, seed=4)
        assert report.count_best[0] == 1.0
        assert report.count_best[1] == 0.0

    def test_deterministic_under_seed(self):
        real, fake = self._feats(0), self._feats(1)
        a = subset_protocol(real, {"s": fake}, n_subsets=15, subset_size=9, seed=7)
        b = subset_protocol(real, {"s": fake}, n_subsets=15, subset_size=9, seed=7)
        assert a.to_dict() == b.to_dict()
        c = subset_protocol(real, {"s": fake}, n_subsets=15, subset_size=9, seed=8)
        assert a.scores != c.scores

    def test_mean_std_recomputable(self):
        report = subset_protocol(self._feats(0), {"s": self._feats(1)},
                                 n_subsets=12, subset_size=8, seed=1)
        assert report.mean[0] == pytest.approx(np.mean(report.scores[0]), rel=1e-12)
        assert report.std[0] == pytest.approx(np.std(report.scores[0], ddof=1), rel=1e-12)

    def test_count_best_sums_to_one(self):
        report = subset_protocol(self._feats(0),
                                 {"a": self._feats(1), "b": self._feats(2),
                                  "c": self._feats(3)},
                                 n_subsets=17, subset_size=7, seed=2)
        assert sum(report.count_best) == pytest.approx(1.0, abs=1e-12)

    def test_subset_size_validation(self):
        with pytest.raises(ValueError):
            subset_protocol(self._feats(0, n=10), {"s": self._feats(1, n=10)},
                            n_subsets=5, subset_size=11)

    def test_report_roundtrip(self, tmp_path):
        report = subset_protocol(self._feats(0), {"s": self._feats(1)},
                                 n_subsets=5, subset_size=5, seed=0)
        path = tmp_path / "report.json"
        report.save(str(path))
        again = KidReport.load(str(path))
        assert again.to_dict() == report.to_dict()


class TestExtractFeatures:
    def _images(self, n=6, seed=0):
        return np.stack([synth_sample(seed + k)[0].data for k in range(n)])

    def test_deterministic(self):
        imgs = self._images()
        a = extract_features(imgs)
        b = extract_features(imgs)
        assert np.array_equal(a, b)

    def test_feature_dim_constant_across_batch_sizes(self):
        imgs = self._images(5)
        a = extract_features(imgs, batch_size=2)
        b = extract_features(imgs, batch_size=64)
        assert a.shape == b.shape
        assert np.allclose(a, b, atol=1e-6)

    def test_permutation_permutes_rows(self):
        imgs = self._images(4)
        feats = extract_features(imgs)
        perm = [2, 0, 3, 1]
        permuted = extract_features(imgs[perm])
        assert np.allclose(feats[perm], permuted, atol=1e-6)

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            extract_features(self._images(2), backend="bogus")


def _blob(n, cy, cx, ry, rx):
    ys, xs = np.mgrid[0:n, 0:n]
    return MaskTensor(((((ys - cy) / ry) ** 2 + (((xs - cx) / rx)) ** 2 <= 1.0)
                       ).astype(np.float64), binary=True)


class TestMaskRetrieval:
    def test_query_in_corpus_wins(self):
        corpus = [_blob(32, 16, 16, 6, 10), _blob(32, 16, 16, 10, 4),
                  _blob(32, 16, 16, 8, 8)]
        assert nn_mask_retrieve(corpus[1], corpus) == 1

    def test_identical_beats_complement(self):
        q = _blob(32, 16, 16, 8, 8)
        complement = MaskTensor(1.0 - q.data, binary=True)
        assert nn_mask_retrieve(q, [complement, q]) == 1

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(5)
        corpus = []
        for _ in range(10):
            cy, cx = rng.integers(10, 22, 2)
            ry, rx = rng.integers(3, 9, 2)
            corpus.append(_blob(32, cy, cx, ry, rx))
        query = _blob(32, 15, 17, 5, 7)
        got = nn_mask_retrieve(query, corpus)

        from stampgan.evaluation import _resize_float, _tight_crop
        q = _tight_crop(query.data)
        sims = [cosine_similarity_oracle(q, _resize_float(_tight_crop(c.data),
                                                          *q.shape))
                for c in corpus]
        assert got == int(np.argmax(sims))

    def test_scale_consistency(self):
        corpus = [_blob(64, 32, 32, 9, 20), _blob(64, 32, 32, 20, 9),
                  _blob(64, 32, 32, 14, 14)]
        query = _blob(64, 32, 32, 10, 21)
        small = nn_mask_retrieve(query, corpus)
        doubled = MaskTensor(np.kron(query.data, np.ones((2, 2))), binary=True)
        assert nn_mask_retrieve(doubled, corpus) == small

    def test_empty_query_rejected(self):
        with pytest.raises(EmptyMaskError):
            nn_mask_retrieve(MaskTensor(np.zeros((8, 8))), [_blob(8, 4, 4, 2, 2)])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            nn_mask_retrieve(_blob(8, 4, 4, 2, 2), [])
