# modules/pike.py → Peak Kernel & Generation Metrics
# Role: PIKE similarity between binned spectra and the consistency/variability suite built
# on it (PIKE-all, MMD², class distance, neighbour distance).

# Responsibilities:

# pike_kernel / pike_gram: K(a,b) = 1/(2√(2πt)) ΣΣ λa λb exp(−(pa−pb)²/(8t)) over bins above eps

# Cosine-style normalisation K̂ = K/√(Kaa·Kbb); all-zero spectra score 0 (1 against another all-zero)

# mmd2 / class_distance / neighbour_distance / pike_all, per-class metric_report and its CSV

# Peak positions are bin indices. The Gaussian over index offsets is a banded matrix G,
# truncated where it drops below 1e-30, so K = Xs · G · Ysᵀ with Xs, Ys sparse.

# modules/pike.py

from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import math

import numpy as np
import pandas as pd
from scipy import sparse

from core.console import log
from core.errors import ConfigError, InvalidInputError, ShapeError
from core.strategy import chunk_ranges, parallel_map, resolve_threads
from models import KernelConfig, LabeledCorpus, MetricReport, MetricRow, ProcessedSpectrum

BAND_FLOOR = 1e-30
UNIT_SNAP = 1e-12

SpectrumLike = Union[ProcessedSpectrum, np.ndarray, Sequence[float]]


def _vector(x: SpectrumLike) -> np.ndarray:
    if isinstance(x, ProcessedSpectrum):
        return x.bins
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _matrix(X) -> np.ndarray:
    if isinstance(X, LabeledCorpus):
        return X.spectra
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], ProcessedSpectrum):
        return np.vstack([s.bins for s in X])
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(1, -1) if X.ndim == 1 else X


def half_band(t: float) -> int:
    return int(math.floor(math.sqrt(8.0 * t * math.log(1.0 / BAND_FLOOR))))


@lru_cache(maxsize=16)
def gaussian_band(d: int, t: float) -> sparse.csr_matrix:
    """D×D matrix with G[i,j] = exp(−(i−j)²/(8t)) for |i−j| within the truncation band."""
    h = min(half_band(t), d - 1)
    offsets = np.arange(-h, h + 1)
    diagonals = [np.full(d - abs(k), math.exp(-(k * k) / (8.0 * t))) for k in offsets]
    return sparse.diags(diagonals, offsets, shape=(d, d), format="csr")


def prefactor(t: float) -> float:
    return 1.0 / (2.0 * math.sqrt(2.0 * math.pi * t))


def _sparse_rows(X: np.ndarray, eps: float) -> sparse.csr_matrix:
    return sparse.csr_matrix(np.where(X > eps, X, 0.0))


def _self_similarity(XG: sparse.csr_matrix, Xs: sparse.csr_matrix, t: float) -> np.ndarray:
    return prefactor(t) * np.asarray(XG.multiply(Xs).sum(axis=1)).reshape(-1)


def _normalize(K: np.ndarray, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    zx, zy = kx <= 0, ky <= 0
    denom = np.sqrt(np.outer(np.where(zx, 1.0, kx), np.where(zy, 1.0, ky)))
    Kn = np.clip(K / denom, 0.0, 1.0)
    Kn[np.abs(Kn - 1.0) < UNIT_SNAP] = 1.0
    Kn[zx, :] = 0.0
    Kn[:, zy] = 0.0
    Kn[np.ix_(zx, zy)] = 1.0
    return Kn


def pike_gram(X, Y, cfg: Optional[KernelConfig] = None, threads: int = 1) -> np.ndarray:
    """|X|×|Y| PIKE matrix; row chunks of X are evaluated concurrently, results are order-stable."""
    cfg = cfg or KernelConfig()
    X, Y = _matrix(X), _matrix(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"spectra lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))

    G = gaussian_band(X.shape[1], float(cfg.t))
    Xs, Ys = _sparse_rows(X, cfg.sparsity_eps), _sparse_rows(Y, cfg.sparsity_eps)
    YsT = Ys.T.tocsc()

    def rows(block: range) -> np.ndarray:
        return (Xs[block.start:block.stop] @ G @ YsT).toarray()

    blocks = chunk_ranges(X.shape[0], resolve_threads(threads))
    K = prefactor(cfg.t) * np.vstack(parallel_map(rows, blocks, threads))
    if not cfg.normalized:
        return K
    kx = _self_similarity(Xs @ G, Xs, cfg.t)
    ky = _self_similarity(Ys @ G, Ys, cfg.t)
    return _normalize(K, kx, ky)


def pike_kernel(a: SpectrumLike, b: SpectrumLike, cfg: Optional[KernelConfig] = None) -> float:
    a, b = _vector(a), _vector(b)
    if a.size != b.size:
        raise ShapeError(f"spectra lengths differ: {a.size} vs {b.size}")
    return float(pike_gram(a, b, cfg)[0, 0])


def _require_normalized(cfg: KernelConfig, what: str) -> None:
    if not cfg.normalized:
        raise ConfigError(f"{what} is a dissimilarity 1 − K̂ and needs the normalized kernel")


def mmd2(X, Xt, cfg: Optional[KernelConfig] = None, threads: int = 1) -> float:
    """Unbiased within-set terms (n ≠ n′, m ≠ m′) plus the full cross term."""
    cfg = cfg or KernelConfig()
    X, Xt = _matrix(X), _matrix(Xt)
    n, m = X.shape[0], Xt.shape[0]
    if n < 2 or m < 2:
        raise InvalidInputError(f"MMD² needs at least two spectra per set, got {n} and {m}")
    Kxx = pike_gram(X, X, cfg, threads)
    Kyy = pike_gram(Xt, Xt, cfg, threads)
    Kxy = pike_gram(X, Xt, cfg, threads)
    a = (Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
    b = (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
    c = Kxy.sum() / (n * m)
    return float(a + b - 2.0 * c)


def class_distance(Xt, cfg: Optional[KernelConfig] = None, threads: int = 1) -> Tuple[float, float]:
    """Mean and std of 1 − K̂ over unordered pairs of one generated class."""
    cfg = cfg or KernelConfig()
    _require_normalized(cfg, "class distance")
    Xt = _matrix(Xt)
    if Xt.shape[0] < 2:
        raise InvalidInputError(f"class distance needs at least two spectra, got {Xt.shape[0]}")
    K = pike_gram(Xt, Xt, cfg, threads)
    upper = 1.0 - K[np.triu_indices(Xt.shape[0], k=1)]
    return float(upper.mean()), float(upper.std())


def neighbour_distance(Xt, X, cfg: Optional[KernelConfig] = None, exclude_self: bool = False,
                       threads: int = 1) -> Tuple[float, float, List[int]]:
    """
    For each generated spectrum, 1 − max K̂ against the training set and the index of that
    nearest neighbour. exclude_self treats Xt and X as the same set and skips the diagonal.
    """
    cfg = cfg or KernelConfig()
    _require_normalized(cfg, "neighbour distance")
    Xt, X = _matrix(Xt), _matrix(X)
    if Xt.shape[0] == 0 or X.shape[0] == 0:
        raise InvalidInputError("neighbour distance needs non-empty generated and training sets")
    K = pike_gram(Xt, X, cfg, threads)
    if exclude_self:
        if Xt.shape[0] != X.shape[0] or X.shape[0] < 2:
            raise InvalidInputError("exclude_self needs the same set (of at least two spectra) on both sides")
        np.fill_diagonal(K, -np.inf)
    nearest = np.argmax(K, axis=1)
    distances = 1.0 - K[np.arange(K.shape[0]), nearest]
    return float(distances.mean()), float(distances.std()), nearest.tolist()


def pike_all(Xt, X_real, cfg: Optional[KernelConfig] = None, threads: int = 1) -> Tuple[float, float]:
    Xt, X_real = _matrix(Xt), _matrix(X_real)
    if Xt.shape[0] == 0 or X_real.shape[0] == 0:
        raise InvalidInputError("PIKE-all needs non-empty generated and real sets")
    K = pike_gram(Xt, X_real, cfg, threads)
    return float(K.mean()), float(K.std())


# Reports

def _aggregate(rows: List[MetricRow]) -> MetricReport:
    table = pd.DataFrame([r.model_dump() for r in rows], columns=["label"] + MetricReport.COLUMNS)
    means = table[MetricReport.COLUMNS].mean(axis=0)
    stds = table[MetricReport.COLUMNS].std(axis=0, ddof=0)
    return MetricReport(rows=rows, mean=means.to_dict(), std=stds.to_dict())


def metric_report(real: LabeledCorpus, generated: LabeledCorpus, cfg: Optional[KernelConfig] = None,
                  threads: int = 1) -> MetricReport:
    """Per-class PIKE-all, MMD², CD and ND for every class present in `generated`."""
    cfg = cfg or KernelConfig()
    if real.dim != generated.dim:
        raise ShapeError(f"real and generated spectra lengths differ: {real.dim} vs {generated.dim}")
    present = [name for name, count in generated.class_counts().items() if count > 0]
    if not present:
        raise InvalidInputError("generated corpus has no spectra")
    real_counts = {name: count for name, count in real.class_counts().items() if count > 0}
    missing = [name for name in present if name not in real_counts]
    if missing:
        raise InvalidInputError(f"generated classes {missing} are absent from the real corpus")

    rows = []
    for name in present:
        Xt, X = generated.of_class(name), real.of_class(name)
        pa_mean, pa_std = pike_all(Xt, X, cfg, threads)
        cd_mean, cd_std = class_distance(Xt, cfg, threads)
        nd_mean, nd_std, _ = neighbour_distance(Xt, X, cfg, threads=threads)
        rows.append(MetricRow(label=name, pike_all_mean=pa_mean, pike_all_std=pa_std,
                              mmd2=mmd2(X, Xt, cfg, threads), cd_mean=cd_mean, cd_std=cd_std,
                              nd_mean=nd_mean, nd_std=nd_std))
        log("pike", f"{name}: PIKE-all={pa_mean:.3f}±{pa_std:.3f} MMD²={rows[-1].mmd2:.4f} "
                    f"CD={cd_mean:.3f}±{cd_std:.3f} ND={nd_mean:.3f}±{nd_std:.3f}")
    return _aggregate(rows)


def baseline_report(real: LabeledCorpus, cfg: Optional[KernelConfig] = None, threads: int = 1) -> MetricReport:
    """Reference row computed within the real set: MMD² is 0 by definition, ND skips self-matches."""
    cfg = cfg or KernelConfig()
    rows = []
    for name, count in real.class_counts().items():
        if count < 2:
            continue
        X = real.of_class(name)
        pa_mean, pa_std = pike_all(X, X, cfg, threads)
        cd_mean, cd_std = class_distance(X, cfg, threads)
        nd_mean, nd_std, _ = neighbour_distance(X, X, cfg, exclude_self=True, threads=threads)
        rows.append(MetricRow(label=name, pike_all_mean=pa_mean, pike_all_std=pa_std, mmd2=0.0,
                              cd_mean=cd_mean, cd_std=cd_std, nd_mean=nd_mean, nd_std=nd_std))
    if not rows:
        raise InvalidInputError("baseline needs a class with at least two real spectra")
    return _aggregate(rows)


def report_frame(report: MetricReport) -> pd.DataFrame:
    """
    One row per class plus `__mean__`: value columns hold the mean across classes; each
    *_std column of that row holds the across-class std of the matching *_mean column
    (mmd2 has no std column, so its cross-class spread lives only in report.std).
    """
    frame = pd.DataFrame([r.model_dump(by_alias=True) for r in report.rows], columns=["class"] + MetricReport.COLUMNS)
    aggregate = {"class": "__mean__"}
    for column in MetricReport.COLUMNS:
        if column.endswith("_std"):
            aggregate[column] = report.std.get(column.replace("_std", "_mean"), 0.0)
        else:
            aggregate[column] = report.mean.get(column, 0.0)
    return pd.concat([frame, pd.DataFrame([aggregate])], ignore_index=True)


def save_report_csv(report: MetricReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_frame(report).to_csv(path, index=False, float_format="%.9g")
    return path
