# modules/corpus.py → Labeled Corpora
# Role: Corpus CSV I/O, stratified subsets and splits, and the parametric toy-spectrum
# synthesizer used for desk-scale experiments.

# CSV layout: header `label,bin_0,...,bin_{D-1}`, one spectrum per row, floats with
# 9 significant digits. Vocabulary order is first appearance in the file.

# modules/corpus.py

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from core.console import log
from core.context import make_stream
from core.errors import CorpusParseError, InvalidInputError
from models import LabeledCorpus, ToyCorpusSpec

FLOAT_FORMAT = "%.9g"


def bin_columns(d: int) -> List[str]:
    return [f"bin_{j}" for j in range(d)]


def load_corpus_csv(path, mz_min: float = 2000.0, bin_width: float = 3.0) -> LabeledCorpus:
    path = Path(path)
    if not path.exists():
        raise CorpusParseError("file not found", path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (ValueError, pd.errors.ParserError) as e:
        # pandas reports "Expected k fields in line i, saw j" for ragged rows
        raise CorpusParseError(f"ragged or unreadable CSV: {e}", path=str(path)) from e

    columns = list(frame.columns)
    if not columns or columns[0] != "label" or columns[1:] != bin_columns(len(columns) - 1):
        raise CorpusParseError(f"unknown header; expected label,bin_0,...,bin_{{D-1}}, got {columns[:4]}...",
                               line=1, path=str(path))
    cols = columns[1:]

    labels = frame["label"].to_numpy() if len(frame) else np.array([], dtype=str)
    values = frame[cols].replace("", np.nan).apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64) \
        if len(frame) else np.zeros((0, len(cols)))

    for row in range(values.shape[0]):
        line = row + 2
        if not labels[row]:
            raise CorpusParseError("empty label", line=line, path=str(path))
        if np.isnan(values[row]).any():
            raise CorpusParseError("ragged row or non-numeric value", line=line, path=str(path))
        if values[row].min(initial=0.0) < 0 or values[row].max(initial=0.0) > 1:
            j = int(np.flatnonzero((values[row] < 0) | (values[row] > 1))[0])
            raise CorpusParseError(f"value {values[row, j]:g} in bin_{j} outside [0, 1]", line=line, path=str(path))

    vocab: List[str] = []
    for label in labels:
        if label not in vocab:
            vocab.append(label)
    index = {name: i for i, name in enumerate(vocab)}
    corpus = LabeledCorpus(spectra=values.reshape(len(labels), len(cols)),
                           labels=np.array([index[label] for label in labels], dtype=np.int64),
                           vocab=vocab, mz_min=mz_min, bin_width=bin_width)
    log("corpus", f"Loaded {corpus.n}×{corpus.dim} corpus from {path.name} ({len(vocab)} classes)")
    return corpus


def save_corpus_csv(corpus: LabeledCorpus, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(corpus.spectra, columns=bin_columns(corpus.dim))
    frame.insert(0, "label", [corpus.vocab[i] for i in corpus.labels])
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def corpus_from_rows(spectra: np.ndarray, label_names: Sequence[str], vocab: Sequence[str],
                     mz_min: float = 2000.0, bin_width: float = 3.0) -> LabeledCorpus:
    index = {name: i for i, name in enumerate(vocab)}
    missing = sorted(set(label_names) - set(index))
    if missing:
        raise InvalidInputError(f"labels {missing} not in vocab {list(vocab)}")
    spectra = np.asarray(spectra, dtype=np.float64).reshape(len(label_names), -1) if len(label_names) else \
        np.zeros((0, np.asarray(spectra).shape[-1] if np.asarray(spectra).ndim == 2 else 0))
    return LabeledCorpus(spectra=spectra, labels=[index[name] for name in label_names],
                         vocab=list(vocab), mz_min=mz_min, bin_width=bin_width)


def merge_corpora(*corpora: LabeledCorpus) -> LabeledCorpus:
    first = corpora[0]
    for other in corpora[1:]:
        if other.vocab != first.vocab:
            raise InvalidInputError(f"cannot merge corpora with different vocabularies: {first.vocab} vs {other.vocab}")
        if other.dim != first.dim:
            raise InvalidInputError(f"cannot merge corpora with {first.dim} and {other.dim} bins")
    return LabeledCorpus(spectra=np.vstack([c.spectra for c in corpora]),
                         labels=np.concatenate([c.labels for c in corpora]),
                         vocab=list(first.vocab), mz_min=first.mz_min, bin_width=first.bin_width)


def make_toy_corpus(spec: ToyCorpusSpec) -> LabeledCorpus:
    """
    Each class gets a fixed random peak template; every sample jitters peak positions
    (rounded Gaussian, in bins) and intensities (relative Gaussian), adds Gaussian
    background noise, clamps at zero and max-normalises. Pure function of `spec`.
    """
    rng = make_stream(spec.seed, "toy-corpus")
    d, k = spec.bins, spec.peaks_per_class
    margin = int(np.ceil(3 * spec.position_jitter)) + 1
    margin = max(0, min(margin, (d - k) // 2))
    candidates = np.arange(margin, d - margin)
    if candidates.size < k:
        raise InvalidInputError(f"{d} bins cannot hold {k} distinct peaks")

    templates = []
    for _ in range(spec.num_classes):
        positions = np.sort(rng.choice(candidates, size=k, replace=False))
        heights = rng.uniform(0.3, 1.0, size=k)
        heights[rng.integers(k)] = 1.0
        templates.append((positions, heights))

    rows, labels = [], []
    for c, count in enumerate(spec.counts()):
        positions, heights = templates[c]
        for _ in range(count):
            shift = np.rint(rng.normal(0.0, spec.position_jitter, size=k)).astype(np.int64)
            pos = np.clip(positions + shift, 0, d - 1)
            amp = heights * (1.0 + rng.normal(0.0, spec.intensity_jitter, size=k))
            x = np.zeros(d)
            np.add.at(x, pos, amp)
            x += rng.normal(0.0, spec.noise_level, size=d)
            x = np.maximum(x, 0.0)
            peak = x.max()
            rows.append(x / peak if peak > 0 else x)
            labels.append(c)

    spectra = np.vstack(rows) if rows else np.zeros((0, d))
    return LabeledCorpus(spectra=spectra, labels=np.asarray(labels, dtype=np.int64), vocab=spec.names())


def stratified_subset(corpus: LabeledCorpus, per_class_counts: Dict[str, int], seed: int) -> LabeledCorpus:
    """Uniform sampling without replacement per class; classes not listed contribute nothing."""
    unknown = sorted(set(per_class_counts) - set(corpus.vocab))
    if unknown:
        raise InvalidInputError(f"unknown classes {unknown}; vocab: {corpus.vocab}")
    rng = make_stream(seed, "stratified-subset")
    chosen = []
    for c, name in enumerate(corpus.vocab):
        want = int(per_class_counts.get(name, 0))
        members = np.flatnonzero(corpus.labels == c)
        if want > members.size:
            raise InvalidInputError(f"class '{name}' has {members.size} samples, {want} requested")
        if want:
            chosen.append(rng.choice(members, size=want, replace=False))
    indices = rng.permutation(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return corpus.subset(indices)


def stratified_split(corpus: LabeledCorpus, fractions: Sequence[float], seed: int) -> List[LabeledCorpus]:
    """Split every class by `fractions` (normalised to sum 1); the last part takes the remainder."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.size < 1 or np.any(fractions < 0) or fractions.sum() <= 0:
        raise InvalidInputError(f"invalid split fractions {fractions.tolist()}")
    fractions = fractions / fractions.sum()
    rng = make_stream(seed, "stratified-split")
    parts: List[List[np.ndarray]] = [[] for _ in fractions]
    for c in range(corpus.num_classes):
        members = rng.permutation(np.flatnonzero(corpus.labels == c))
        cuts = np.floor(np.cumsum(fractions)[:-1] * members.size + 1e-9).astype(int)
        for i, piece in enumerate(np.split(members, cuts)):
            parts[i].append(piece)
    return [corpus.subset(rng.permutation(np.concatenate(p))) for p in parts]
