import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import ConfigError, InvalidInputError, ShapeError
from models import KernelConfig, LabeledCorpus
from modules.pike import (baseline_report, class_distance, gaussian_band, half_band, metric_report, mmd2,
                          neighbour_distance, pike_all, pike_gram, pike_kernel, save_report_csv)

RAW = KernelConfig(t=8.0, normalized=False)


def naive_pike(a: np.ndarray, b: np.ndarray, t: float) -> float:
    total = 0.0
    for i in np.flatnonzero(a):
        for j in np.flatnonzero(b):
            total += a[i] * b[j] * math.exp(-((i - j) ** 2) / (8.0 * t))
    return total / (2.0 * math.sqrt(2.0 * math.pi * t))


def sparse_spectra(n: int, d: int, nonzero: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X = np.zeros((n, d))
    for row in X:
        row[rng.choice(d, size=nonzero, replace=False)] = rng.uniform(0.05, 1.0, nonzero)
    return X


def test_identical_spectra_score_exactly_one(kernel):
    a = sparse_spectra(1, 60, 8, seed=0)[0]
    assert pike_kernel(a, a, kernel) == 1.0


def test_single_peaks_follow_the_gaussian(single_peak, kernel):
    assert pike_kernel(single_peak(50, 10), single_peak(50, 14), kernel) == pytest.approx(math.exp(-16 / 64), abs=1e-9)


@settings(deadline=None)
@given(st.integers(0, 40), st.floats(0.5, 50.0))
def test_peak_pair_closed_form(delta, t):
    a, b = np.zeros(100), np.zeros(100)
    a[5], b[5 + delta] = 1.0, 1.0
    expected = math.exp(-delta ** 2 / (8.0 * t))
    assert pike_kernel(a, b, KernelConfig(t=t)) == pytest.approx(expected, abs=1e-9)


def test_distant_peaks_do_not_interact(single_peak, kernel):
    assert pike_kernel(single_peak(150, 10), single_peak(150, 110), kernel) < 1e-60


def test_similarity_decreases_with_separation(single_peak, kernel):
    scores = [pike_kernel(single_peak(80, 20), single_peak(80, 20 + s), kernel) for s in range(0, 30, 3)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


def test_band_truncation():
    assert half_band(8.0) == math.floor(math.sqrt(64.0 * math.log(1e30)))
    G = gaussian_band(200, 8.0).toarray()
    h = half_band(8.0)
    assert G[0, h] > 0.0 and G[0, h + 1] == 0.0
    assert np.allclose(G, G.T)


def test_gram_matches_naive_double_loop():
    X, Y = sparse_spectra(6, 50, 7, seed=1), sparse_spectra(5, 50, 7, seed=2)
    raw = pike_gram(X, Y, RAW)
    for i in range(6):
        for j in range(5):
            assert raw[i, j] == pytest.approx(naive_pike(X[i], Y[j], 8.0), abs=1e-12)
    normalized = pike_gram(X, Y)
    expected = raw[0, 0] / math.sqrt(naive_pike(X[0], X[0], 8.0) * naive_pike(Y[0], Y[0], 8.0))
    assert normalized[0, 0] == pytest.approx(expected, abs=1e-12)


def test_gram_is_symmetric_and_bounded():
    X, Y = sparse_spectra(7, 40, 6, seed=3), sparse_spectra(4, 40, 6, seed=4)
    K = pike_gram(X, Y)
    assert np.allclose(K, pike_gram(Y, X).T, atol=1e-12)
    assert K.min() >= 0.0 and K.max() <= 1.0


def test_gram_does_not_depend_on_thread_count():
    X = sparse_spectra(23, 60, 9, seed=5)
    np.testing.assert_allclose(pike_gram(X, X, threads=1), pike_gram(X, X, threads=4), rtol=1e-13, atol=0)


def test_zero_spectra():
    zero, other = np.zeros(30), sparse_spectra(1, 30, 4, seed=6)[0]
    assert pike_kernel(zero, other) == 0.0
    assert pike_kernel(zero, zero) == 1.0


def test_length_mismatch_is_a_shape_error():
    with pytest.raises(ShapeError):
        pike_kernel(np.ones(5), np.ones(6))


def test_mmd_of_a_set_with_itself_is_zero():
    x = sparse_spectra(1, 40, 5, seed=7)
    X = np.repeat(x, 3, axis=0)
    assert mmd2(X, X) == 0.0


def test_mmd_of_non_interacting_sets(single_peak):
    X = np.vstack([single_peak(150, 10)] * 3)
    Y = np.vstack([single_peak(150, 110)] * 3)
    assert pike_gram(X, Y).max() < 1e-12
    assert mmd2(X, Y) == pytest.approx(2.0, abs=1e-12)


def test_mmd_orders_same_and_different_classes(toy_corpus):
    a = toy_corpus.of_class("species_0")
    b = toy_corpus.of_class("species_1")
    assert mmd2(a[:15], a[15:]) < mmd2(a[:15], b[:15])


def test_mmd_needs_two_per_set():
    with pytest.raises(InvalidInputError):
        mmd2(np.ones((1, 5)), np.ones((3, 5)))


def test_class_distance_of_two_peaks(single_peak):
    mean, std = class_distance(np.vstack([single_peak(50, 10), single_peak(50, 14)]))
    assert mean == pytest.approx(1.0 - math.exp(-0.25), abs=1e-9)
    assert std == 0.0
    same = np.repeat(sparse_spectra(1, 50, 5, seed=8), 4, axis=0)
    assert class_distance(same) == (0.0, 0.0)


def test_distances_need_the_normalized_kernel():
    X = sparse_spectra(3, 20, 4, seed=9)
    with pytest.raises(ConfigError):
        class_distance(X, RAW)
    with pytest.raises(ConfigError):
        neighbour_distance(X, X, RAW)


def test_neighbour_distance(single_peak):
    X = sparse_spectra(5, 40, 5, seed=10)
    mean, std, nearest = neighbour_distance(X[:2], X)
    assert (mean, std) == (0.0, 0.0)
    assert nearest == [0, 1]
    pair = np.vstack([single_peak(50, 10), single_peak(50, 14)])
    mean, _, nearest = neighbour_distance(pair, pair, exclude_self=True)
    assert mean == pytest.approx(1.0 - math.exp(-0.25), abs=1e-9)
    assert nearest == [1, 0]


def test_pike_all_of_a_spectrum_with_itself():
    x = sparse_spectra(1, 30, 4, seed=11)
    assert pike_all(x, x) == (1.0, 0.0)


def test_metric_oracle_on_random_sparse_spectra():
    X, Xt = sparse_spectra(8, 40, 6, seed=12), sparse_spectra(6, 40, 6, seed=13)

    def k(a, b):
        return naive_pike(a, b, 8.0) / math.sqrt(naive_pike(a, a, 8.0) * naive_pike(b, b, 8.0))

    Kxx = np.array([[k(a, b) for b in X] for a in X])
    Kyy = np.array([[k(a, b) for b in Xt] for a in Xt])
    Kxy = np.array([[k(a, b) for b in Xt] for a in X])
    expected = ((Kxx.sum() - np.trace(Kxx)) / (8 * 7) + (Kyy.sum() - np.trace(Kyy)) / (6 * 5)
                - 2.0 * Kxy.mean())
    assert mmd2(X, Xt) == pytest.approx(expected, abs=1e-10)
    assert pike_all(Xt, X)[0] == pytest.approx(Kxy.mean(), abs=1e-10)
    pairs = [1.0 - Kyy[i, j] for i in range(6) for j in range(i + 1, 6)]
    assert class_distance(Xt)[0] == pytest.approx(np.mean(pairs), abs=1e-10)
    assert neighbour_distance(Xt, X)[0] == pytest.approx(np.mean(1.0 - Kxy.max(axis=0)), abs=1e-10)


def identical_class_corpus() -> LabeledCorpus:
    rows = np.vstack([np.repeat(sparse_spectra(1, 40, 5, seed=s), 3, axis=0) for s in (14, 15)])
    return LabeledCorpus(spectra=rows, labels=[0, 0, 0, 1, 1, 1], vocab=["A", "B"])


def test_report_of_real_against_itself():
    real = identical_class_corpus()
    report = metric_report(real, real)
    for row in report.rows:
        assert row.pike_all_mean == 1.0
        assert row.mmd2 == 0.0
        assert row.nd_mean == 0.0
        assert row.cd_mean == 0.0
    baseline = baseline_report(real)
    assert [r.cd_mean for r in baseline.rows] == [r.cd_mean for r in report.rows]


def test_report_covers_generated_classes_only(toy_corpus):
    generated = toy_corpus.subset(np.flatnonzero(toy_corpus.labels == 1)[:5])
    report = metric_report(toy_corpus, generated)
    assert [r.label for r in report.rows] == ["species_1"]
    row = report.row("species_1")
    X, Xt = toy_corpus.of_class("species_1"), generated.spectra
    assert row.pike_all_mean == pytest.approx(pike_all(Xt, X)[0])
    assert row.mmd2 == pytest.approx(mmd2(X, Xt))
    assert row.nd_mean == 0.0


def test_report_rejects_classes_missing_from_real(toy_corpus):
    real = toy_corpus.subset(np.flatnonzero(toy_corpus.labels == 0))
    with pytest.raises(InvalidInputError):
        metric_report(real, toy_corpus)


def test_report_csv_layout(tmp_path, toy_corpus):
    generated = toy_corpus.subset(np.flatnonzero(toy_corpus.labels != 2)[::3])
    report = metric_report(toy_corpus, generated)
    frame = pd.read_csv(save_report_csv(report, tmp_path / "metrics.csv"))
    assert list(frame.columns) == ["class", "pike_all_mean", "pike_all_std", "mmd2", "cd_mean", "cd_std",
                                   "nd_mean", "nd_std"]
    assert frame["class"].tolist() == ["species_0", "species_1", "__mean__"]
    mean_row = frame.iloc[-1]
    assert mean_row["mmd2"] == pytest.approx(frame["mmd2"][:2].mean())
    assert mean_row["cd_std"] == pytest.approx(frame["cd_mean"][:2].std(ddof=0))
