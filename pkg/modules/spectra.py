# modules/spectra.py → Spectrum Preprocessing
# Role: Seven-step pipeline turning an acquired (m/z, intensity) list into a fixed-length
# max-normalised bin vector.

# Steps, in order:

# 1. square-root variance stabilisation
# 2. Savitzky-Golay smoothing (symmetric window shrinkage at the edges)
# 3. SNIP baseline removal
# 4. robust noise threshold (MAD based)
# 5. trim to [mz_min, mz_max)
# 6. sum-binning at bin_width Da
# 7. per-spectrum max normalisation

# Every step is a pure function; spectra can be processed concurrently.

# modules/spectra.py

from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import savgol_coeffs

from core.console import log, warn
from core.errors import CorpusParseError, InvalidInputError
from core.strategy import parallel_map
from models import LabeledCorpus, PreprocessConfig, ProcessedSpectrum, RawSpectrum, num_bins

MAD_TO_SIGMA = 0.6745


def sqrt_stabilize(raw: RawSpectrum) -> RawSpectrum:
    if np.any(raw.intensity < 0):
        raise InvalidInputError(f"negative intensity at index {int(np.argmin(raw.intensity))}")
    return raw.with_intensity(np.sqrt(raw.intensity))


def savitzky_golay(raw: RawSpectrum, half_window: int = 10, polyorder: int = 3) -> RawSpectrum:
    """
    Least-squares polynomial smoothing over 2*half_window+1 samples.
    The k-th point from either edge uses the centred window of 2k+1 samples and
    order min(polyorder, 2k), so nothing is padded.
    """
    y = raw.intensity
    n = y.size
    window = 2 * half_window + 1
    if n < window:
        raise InvalidInputError(f"spectrum of length {n} is shorter than the smoothing window ({window})")
    out = np.empty(n)
    coeffs = savgol_coeffs(window, polyorder, use="dot")
    out[half_window:n - half_window] = sliding_window_view(y, window) @ coeffs
    for k in range(half_window):
        width = 2 * k + 1
        edge = savgol_coeffs(width, min(polyorder, 2 * k), use="dot")
        out[k] = y[:width] @ edge
        out[n - 1 - k] = y[n - width:] @ edge
    return raw.with_intensity(out)


def snip_baseline(raw: RawSpectrum, iterations: int = 20) -> Tuple[RawSpectrum, RawSpectrum]:
    """Increasing-window clipping; boundary neighbours are clamped to the ends."""
    if iterations < 1:
        raise InvalidInputError(f"snip iterations must be >= 1, got {iterations}")
    b = raw.intensity.copy()
    n = b.size
    idx = np.arange(n)
    for i in range(1, iterations + 1):
        left = b[np.clip(idx - i, 0, n - 1)]
        right = b[np.clip(idx + i, 0, n - 1)]
        b = np.minimum(b, (left + right) / 2.0)
    corrected = np.maximum(raw.intensity - b, 0.0)
    return raw.with_intensity(corrected), raw.with_intensity(b)


def noise_level(intensity: np.ndarray, noise_k: float = 2.0) -> float:
    """noise_k × robust sigma, with sigma = MAD / 0.6745."""
    if intensity.size == 0:
        return 0.0
    mad = np.median(np.abs(intensity - np.median(intensity)))
    return float(noise_k * mad / MAD_TO_SIGMA)


def noise_threshold(raw: RawSpectrum, noise_k: float = 2.0, tau: Optional[float] = None) -> RawSpectrum:
    """Zero every value below the threshold; `tau` overrides the per-spectrum estimate."""
    tau = noise_level(raw.intensity, noise_k) if tau is None else tau
    return raw.with_intensity(np.where(raw.intensity < tau, 0.0, raw.intensity))


def trim(raw: RawSpectrum, mz_min: float = 2000.0, mz_max: float = 20000.0) -> RawSpectrum:
    keep = (raw.mz >= mz_min) & (raw.mz < mz_max)
    return RawSpectrum.model_construct(mz=raw.mz[keep], intensity=raw.intensity[keep])


def bin_spectrum(raw: RawSpectrum, mz_min: float = 2000.0, mz_max: float = 20000.0,
                 bin_width: float = 3.0) -> ProcessedSpectrum:
    d = num_bins(mz_min, mz_max, bin_width)
    j = np.floor((raw.mz - mz_min) / bin_width).astype(np.int64)
    keep = (j >= 0) & (j < d) & (raw.mz < mz_max)
    bins = np.bincount(j[keep], weights=raw.intensity[keep], minlength=d)[:d]
    return ProcessedSpectrum(bins=bins, mz_min=mz_min, mz_max=mz_max, bin_width=bin_width, normalized=False)


def normalize_max(binned: ProcessedSpectrum) -> ProcessedSpectrum:
    peak = float(binned.bins.max()) if binned.bins.size else 0.0
    if peak <= 0.0:
        return binned.model_copy(update={"normalized": True, "zero_spectrum": True})
    return ProcessedSpectrum(bins=binned.bins / peak, mz_min=binned.mz_min, mz_max=binned.mz_max,
                             bin_width=binned.bin_width, normalized=True)


def correct(raw: RawSpectrum, cfg: PreprocessConfig) -> RawSpectrum:
    """Steps 1-3: stabilise, smooth, remove baseline."""
    smoothed = savitzky_golay(sqrt_stabilize(raw), cfg.half_window, cfg.sg_polyorder)
    corrected, _ = snip_baseline(smoothed, cfg.snip_iterations)
    return corrected


def finish(corrected: RawSpectrum, cfg: PreprocessConfig, tau: Optional[float] = None) -> ProcessedSpectrum:
    """Steps 4-7: threshold, trim, bin, normalise."""
    thresholded = noise_threshold(corrected, cfg.noise_k, tau)
    trimmed = trim(thresholded, cfg.mz_min, cfg.mz_max)
    return normalize_max(bin_spectrum(trimmed, cfg.mz_min, cfg.mz_max, cfg.bin_width))


def preprocess(raw: RawSpectrum, cfg: Optional[PreprocessConfig] = None) -> ProcessedSpectrum:
    cfg = cfg or PreprocessConfig()
    return finish(correct(raw, cfg), cfg)


def preprocess_many(raws: Sequence[RawSpectrum], cfg: PreprocessConfig, threads: int = 1) -> List[ProcessedSpectrum]:
    """Batch pipeline; with threshold_scope='corpus' one threshold is pooled over all spectra."""
    corrected = parallel_map(lambda r: correct(r, cfg), list(raws), threads)
    tau = None
    if cfg.threshold_scope == "corpus" and corrected:
        pooled = np.concatenate([c.intensity for c in corrected])
        tau = noise_level(pooled, cfg.noise_k)
        log("spectra", f"Corpus-level noise threshold τ={tau:.6g}")
    return parallel_map(lambda c: finish(c, cfg, tau), corrected, threads)


# Raw spectrum files

def read_raw_spectrum(path) -> RawSpectrum:
    """Plain text, one 'mz intensity' pair per line, '#' comment lines ignored."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep=r"\s+", comment="#", header=None, dtype=float, engine="python")
    except (ValueError, pd.errors.ParserError) as e:
        raise CorpusParseError(f"unparsable raw spectrum: {e}", path=str(path)) from e
    if frame.shape[1] != 2:
        raise CorpusParseError(f"expected two columns 'mz intensity', found {frame.shape[1]}", path=str(path))
    frame.columns = ["mz", "intensity"]
    if frame.isna().any().any():
        bad = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0])
        raise CorpusParseError("expected two columns 'mz intensity'", line=bad + 1, path=str(path))
    try:
        raw = RawSpectrum(mz=frame["mz"].to_numpy(), intensity=frame["intensity"].to_numpy())
    except ValueError as e:
        raise CorpusParseError(str(e), path=str(path)) from e
    if np.any(raw.intensity < 0):
        raise CorpusParseError("negative intensity", path=str(path))
    return raw


def label_from_filename(path) -> Tuple[str, str]:
    stem = Path(path).stem
    if "__" not in stem:
        raise CorpusParseError("file name must look like '<label>__<id>.txt'", path=str(path))
    label, sample_id = stem.split("__", 1)
    if not label:
        raise CorpusParseError("empty label in file name", path=str(path))
    return label, sample_id


def preprocess_directory(input_dir, cfg: PreprocessConfig, threads: int = 1) -> Tuple[LabeledCorpus, List[str]]:
    """Preprocess every '<label>__<id>.txt' file; unparsable files are skipped and reported."""
    input_dir = Path(input_dir)
    files = sorted(p for p in input_dir.glob("*.txt") if p.is_file())
    if not files:
        raise InvalidInputError(f"No raw spectrum files (*.txt) in {input_dir}")

    labels, raws, failures = [], [], []
    for path in files:
        try:
            label, _ = label_from_filename(path)
            raws.append(read_raw_spectrum(path))
            labels.append(label)
        except InvalidInputError as e:
            warn("spectra", f"Skipping {path.name}: {e}")
            failures.append(path.name)
    if not raws:
        raise CorpusParseError(f"all {len(files)} raw spectrum files failed to parse", path=str(input_dir))

    processed = preprocess_many(raws, cfg, threads)
    zero = sum(p.zero_spectrum for p in processed)
    if zero:
        warn("spectra", f"{zero} spectra are all-zero after preprocessing")

    vocab: List[str] = []
    for label in labels:
        if label not in vocab:
            vocab.append(label)
    corpus = LabeledCorpus(
        spectra=np.vstack([p.bins for p in processed]),
        labels=[vocab.index(label) for label in labels],
        vocab=vocab, mz_min=cfg.mz_min, bin_width=cfg.bin_width,
    )
    counts = ", ".join(f"{k}={v}" for k, v in corpus.class_counts().items())
    log("spectra", f"Preprocessed {corpus.n} spectra ({len(failures)} skipped): {counts}")
    return corpus, failures
