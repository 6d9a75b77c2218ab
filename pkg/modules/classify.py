# modules/classify.py → Species Classification & Experiments
# Role: MLP species classifier and the synthetic-substitution / minority-augmentation
# experiment drivers built on it.

# Responsibilities:

# train_classifier: softmax cross-entropy, Adam, best validation accuracy, patience stop

# detection_rates: per-class recall (%), unweighted macro mean, confusion matrix in counts and row %

# substitution_experiment: one classifier per training condition (real, each generator), same test set(s)

# augmentation_experiment: top up every class below target with synthetic spectra, compare before/after

# modules/classify.py

from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core import tensor as T
from core.console import log, warn
from core.context import make_stream
from core.errors import InvalidInputError
from core.layers import Sequential, act, dense, gradients, zero_grad
from core.loop import TrainingLoop, minibatches
from core.optim import AdamState, adam_step
from core.strategy import parallel_map
from core.tensor import DiffArray
from models import DetectionReport, LabeledCorpus, MlpClassifierConfig
from modules.corpus import corpus_from_rows, merge_corpora, stratified_split

# (class name, count, seed) → count×D spectra
SpectrumGenerator = Callable[[str, int, int], np.ndarray]

EVAL_CHUNK = 1024
GAP_WARNING = 5.0


class ClassifierModel:
    def __init__(self, cfg: MlpClassifierConfig, dim: int, vocab: List[str],
                 rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.dim = dim
        self.vocab = list(vocab)
        self.history: List[Dict[str, float]] = []
        self.cost: Dict[str, float] = {}
        rng = rng or make_stream(cfg.seed, "classifier-init")
        specs, prev = [], dim
        for units in cfg.hidden:
            specs += [dense(prev, units), act("relu")]
            prev = units
        specs.append(dense(prev, len(self.vocab), init="xavier"))
        self.net = Sequential(specs, rng, "classifier")

    def parameters(self) -> Dict[str, DiffArray]:
        return self.net.named_parameters()

    def logits(self, x, mode: str = "eval") -> DiffArray:
        return self.net(x, mode)


def cross_entropy(logits, labels: np.ndarray) -> DiffArray:
    logp = T.log_softmax(logits, axis=1)
    picked = logp * T.one_hot(labels, logp.shape[1])
    return -T.sum_(picked) * (1.0 / logp.shape[0])


def predict(model: ClassifierModel, spectra: np.ndarray) -> np.ndarray:
    spectra = np.asarray(spectra, dtype=np.float64)
    if spectra.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    with T.inference():
        return np.concatenate([model.logits(spectra[s:s + EVAL_CHUNK]).value.argmax(axis=1)
                               for s in range(0, spectra.shape[0], EVAL_CHUNK)])


def accuracy(model: ClassifierModel, corpus: LabeledCorpus) -> float:
    return float(np.mean(predict(model, corpus.spectra) == corpus.labels))


def train_classifier(train: LabeledCorpus, val: LabeledCorpus, cfg: Optional[MlpClassifierConfig] = None,
                     verbose: bool = True, require_all_classes: bool = True) -> ClassifierModel:
    cfg = cfg or MlpClassifierConfig()
    if train.n == 0 or val.n == 0:
        raise InvalidInputError("training and validation corpora must be non-empty")
    if train.vocab != val.vocab or train.dim != val.dim:
        raise InvalidInputError(f"train and val must share vocabulary and bin count: {train.vocab} vs {val.vocab}")
    missing = [name for name, count in train.class_counts().items() if count == 0]
    if missing and require_all_classes:
        raise InvalidInputError(f"classes without training samples: {missing}")

    model = ClassifierModel(cfg, train.dim, train.vocab)
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    rng = make_stream(cfg.seed, "classifier-train")

    def train_epoch(epoch: int) -> Dict[str, float]:
        total = 0.0
        for idx in minibatches(train.n, cfg.batch, rng):
            zero_grad(params)
            loss = cross_entropy(model.logits(train.spectra[idx], "train"), train.labels[idx])
            T.backward(loss)
            adam_step(params, gradients(params), state)
            total += float(loss.value) * idx.size
        return {"train_loss": total / train.n}

    loop = TrainingLoop("classifier", params, cfg.max_epochs, cfg.patience, monitor="val_accuracy",
                        mode="max", verbose=verbose)
    model.history = loop.run(train_epoch, lambda epoch: accuracy(model, val))
    model.cost = dict(loop.cost)
    return model


def detection_rates(model: ClassifierModel, test: LabeledCorpus) -> DetectionReport:
    if test.n == 0:
        raise InvalidInputError("test corpus is empty")
    if test.vocab != model.vocab:
        raise InvalidInputError(f"test vocab {test.vocab} differs from model vocab {model.vocab}")
    return report_from_predictions(test.labels, predict(model, test.spectra), model.vocab)


def report_from_predictions(truth: np.ndarray, predicted: np.ndarray, vocab: List[str]) -> DetectionReport:
    C = len(vocab)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (np.asarray(truth, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    row_totals = confusion.sum(axis=1)
    percent = np.zeros((C, C))
    nonempty = row_totals > 0
    percent[nonempty] = 100.0 * confusion[nonempty] / row_totals[nonempty, None]

    rates: Dict[str, Optional[float]] = {}
    omitted = []
    for c, name in enumerate(vocab):
        if row_totals[c] == 0:
            rates[name] = None
            omitted.append(name)
        else:
            rates[name] = float(percent[c, c])
    if omitted:
        warn("classify", f"No test samples for {omitted}; omitted from the macro mean")
    present = [r for r in rates.values() if r is not None]
    return DetectionReport(classes=list(vocab), rates=rates, macro_mean=float(np.mean(present)) if present else 0.0,
                           confusion=confusion, confusion_percent=percent, omitted=omitted)


def synthesize_like(reference: LabeledCorpus, generator: SpectrumGenerator, seed: int,
                    counts: Optional[Mapping[str, int]] = None) -> LabeledCorpus:
    """Synthetic corpus with `counts` per class (default: the reference class counts)."""
    counts = dict(counts if counts is not None else reference.class_counts())
    rows, labels = [], []
    for name in reference.vocab:
        n = int(counts.get(name, 0))
        if n <= 0:
            continue
        block = np.clip(np.asarray(generator(name, n, seed), dtype=np.float64), 0.0, 1.0)
        if block.shape != (n, reference.dim):
            raise InvalidInputError(f"generator returned {block.shape} for '{name}', expected ({n}, {reference.dim})")
        rows.append(block)
        labels += [name] * n
    spectra = np.vstack(rows) if rows else np.zeros((0, reference.dim))
    return corpus_from_rows(spectra, labels, reference.vocab, reference.mz_min, reference.bin_width)


Evaluations = Dict[str, LabeledCorpus]
ConditionReports = Dict[str, Dict[str, DetectionReport]]


def _evaluate(model: ClassifierModel, evaluations: Evaluations) -> Dict[str, DetectionReport]:
    return {name: detection_rates(model, corpus) for name, corpus in evaluations.items()}


def _partitions(test: LabeledCorpus, extra: Optional[Evaluations]) -> Evaluations:
    evaluations = {"test": test}
    evaluations.update(extra or {})
    return evaluations


def substitution_experiment(real_train: LabeledCorpus, val: LabeledCorpus, test: LabeledCorpus,
                            generators: Mapping[str, SpectrumGenerator], cfg: Optional[MlpClassifierConfig] = None,
                            seed: int = 17, evaluations: Optional[Evaluations] = None, threads: int = 1,
                            verbose: bool = False) -> ConditionReports:
    """
    Condition "real" trains on real_train; every named generator trains on a synthetic set with
    the same per-class counts. All classifiers share cfg (and seed) and are validated on `val`.
    """
    cfg = cfg or MlpClassifierConfig()
    partitions = _partitions(test, evaluations)
    conditions: List[Tuple[str, LabeledCorpus]] = [("real", real_train)]
    for name, generator in generators.items():
        conditions.append((name, synthesize_like(real_train, generator, seed)))
        log("classify", f"Synthesized {conditions[-1][1].n} spectra with '{name}'")

    def run(condition: Tuple[str, LabeledCorpus]) -> Dict[str, DetectionReport]:
        model = train_classifier(condition[1], val, cfg, verbose=verbose)
        return _evaluate(model, partitions)

    results = dict(zip([c[0] for c in conditions], parallel_map(run, conditions, threads)))
    real_macro = results["real"]["test"].macro_mean
    for name in generators:
        gap = real_macro - results[name]["test"].macro_mean
        message = f"'{name}': macro {results[name]['test'].macro_mean:.2f}% vs real {real_macro:.2f}% (gap {gap:+.2f})"
        (warn if gap > GAP_WARNING else log)("classify", message)
    return results


def augment_corpus(real: LabeledCorpus, synthetic: LabeledCorpus) -> LabeledCorpus:
    """Real rows first and unchanged, synthetic rows appended."""
    augmented = merge_corpora(real, synthetic)
    if not (np.array_equal(augmented.spectra[:real.n], real.spectra)
            and np.array_equal(augmented.labels[:real.n], real.labels)):
        raise InvalidInputError("augmentation must keep every real training spectrum in place")
    return augmented


def augmentation_experiment(train: LabeledCorpus, test: LabeledCorpus, generator: SpectrumGenerator,
                            target_per_class: Union[int, Mapping[str, int]], val: Optional[LabeledCorpus] = None,
                            cfg: Optional[MlpClassifierConfig] = None, seed: int = 17,
                            evaluations: Optional[Evaluations] = None,
                            verbose: bool = False) -> Tuple[Dict[str, DetectionReport], Dict[str, DetectionReport]]:
    """
    Augment-only: each class with fewer than its target gets the shortfall synthesized and
    appended (classes in the vocab with no training spectra are built from scratch); real
    spectra are never removed. Both classifiers use the same cfg, seed and validation set.
    """
    cfg = cfg or MlpClassifierConfig()
    if val is None:
        train, val = stratified_split(train, [0.8, 0.2], seed)
    counts = train.class_counts()
    targets = ({name: int(target_per_class) for name in train.vocab} if isinstance(target_per_class, (int, np.integer))
               else {name: int(target_per_class.get(name, 0)) for name in train.vocab})
    shortfall = {name: max(0, targets[name] - counts[name]) for name in train.vocab}
    partitions = _partitions(test, evaluations)

    before_model = train_classifier(train, val, cfg, verbose=verbose, require_all_classes=False)
    before = _evaluate(before_model, partitions)
    if not any(shortfall.values()):
        log("classify", "All classes already at target; nothing to augment")
        return before, dict(before)

    synthetic = synthesize_like(train, generator, seed, shortfall)
    augmented = augment_corpus(train, synthetic)
    log("classify", "Augmented " + ", ".join(f"{k}+{v}" for k, v in shortfall.items() if v))
    after_model = train_classifier(augmented, val, cfg, verbose=verbose, require_all_classes=False)
    return before, _evaluate(after_model, partitions)


# Report files

def save_detection_csv(report: DetectionReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [{"class": name, "rate_percent": rate} for name, rate in report.rates.items() if rate is not None]
    rows.append({"class": "__macro__", "rate_percent": report.macro_mean})
    pd.DataFrame(rows, columns=["class", "rate_percent"]).to_csv(path, index=False, float_format="%.9g")
    return path


def save_confusion_csv(report: DetectionReport, path, percent: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = report.confusion_percent if percent else report.confusion
    pd.DataFrame(matrix, index=pd.Index(report.classes, name="class"), columns=report.classes) \
        .to_csv(path, float_format="%.9g")
    return path


def condition_label(condition: str, partition: str) -> str:
    """Partitions other than `test` are suffixed `@partition`."""
    return condition if partition == "test" else f"{condition}@{partition}"


def comparison_frame(results: Mapping[str, Mapping[str, DetectionReport]]) -> pd.DataFrame:
    rows = []
    for condition, partitions in results.items():
        for partition, report in partitions.items():
            label = condition_label(condition, partition)
            for name, rate in report.rates.items():
                if rate is not None:
                    rows.append({"condition": label, "class": name, "rate_percent": rate})
            rows.append({"condition": label, "class": "__macro__", "rate_percent": report.macro_mean})
    return pd.DataFrame(rows, columns=["condition", "class", "rate_percent"])


def save_comparison_csv(results: Mapping[str, Mapping[str, DetectionReport]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    comparison_frame(results).to_csv(path, index=False, float_format="%.9g")
    return path


def save_experiment_reports(results: Mapping[str, Mapping[str, DetectionReport]], path) -> List[Path]:
    """Comparison CSV at `path` plus `<stem>_<condition>_rates.csv` and `_confusion.csv` per evaluated condition."""
    path = Path(path)
    written = [save_comparison_csv(results, path)]
    for condition, partitions in results.items():
        for partition, report in partitions.items():
            stem = f"{path.stem}_{condition_label(condition, partition)}"
            written.append(save_detection_csv(report, path.with_name(f"{stem}_rates.csv")))
            written.append(save_confusion_csv(report, path.with_name(f"{stem}_confusion.csv")))
    return written
