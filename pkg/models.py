from typing import ClassVar, Dict, List, Literal, Optional, Union
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.errors import InvalidInputError

# Domain models shared by spectra, corpus, pike, the generative models and classify


def num_bins(mz_min: float, mz_max: float, bin_width: float) -> int:
    return int(math.floor((mz_max - mz_min) / bin_width + 1e-9))


def _float_vector(value) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {array.shape}")
    return array


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


# Spectra

class RawSpectrum(ArrayModel):
    mz: np.ndarray
    intensity: np.ndarray

    @field_validator("mz", "intensity", mode="before")
    @classmethod
    def _to_vector(cls, value):
        return _float_vector(value)

    @model_validator(mode="after")
    def check_axes(self):
        if self.mz.shape != self.intensity.shape:
            raise ValueError(f"mz ({self.mz.size}) and intensity ({self.intensity.size}) lengths differ")
        if self.mz.size > 1 and not np.all(np.diff(self.mz) > 0):
            raise ValueError("mz must be strictly increasing")
        if not (np.all(np.isfinite(self.mz)) and np.all(np.isfinite(self.intensity))):
            raise ValueError("mz and intensity must be finite")
        return self

    def with_intensity(self, intensity: np.ndarray) -> "RawSpectrum":
        """Copy on the same m/z axis; intermediate pipeline stages may dip below zero."""
        return RawSpectrum.model_construct(mz=self.mz, intensity=np.asarray(intensity, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.mz.size)


class ProcessedSpectrum(ArrayModel):
    bins: np.ndarray
    mz_min: float = 2000.0
    mz_max: float = 20000.0
    bin_width: float = 3.0
    normalized: bool = True
    zero_spectrum: bool = False

    @field_validator("bins", mode="before")
    @classmethod
    def _to_vector(cls, value):
        return _float_vector(value)

    @model_validator(mode="after")
    def check_bins(self):
        expected = num_bins(self.mz_min, self.mz_max, self.bin_width)
        if self.bins.size != expected:
            raise ValueError(f"expected {expected} bins for [{self.mz_min}, {self.mz_max}) at {self.bin_width} Da, got {self.bins.size}")
        if np.any(self.bins < 0):
            raise ValueError("bin values must be non-negative")
        if self.normalized and np.any(self.bins > 1.0):
            raise ValueError("normalized bin values must lie in [0, 1]")
        return self

    @property
    def dim(self) -> int:
        return int(self.bins.size)


class PreprocessConfig(BaseModel):
    half_window: int = 10
    sg_polyorder: int = 3
    snip_iterations: int = 20
    noise_k: float = 2.0
    mz_min: float = 2000.0
    mz_max: float = 20000.0
    bin_width: float = 3.0
    threshold_scope: Literal["spectrum", "corpus"] = "spectrum"

    @model_validator(mode="after")
    def check_ranges(self):
        if self.sg_polyorder < 0:
            raise ValueError("sg_polyorder must be >= 0")
        if self.half_window < self.sg_polyorder / 2 + 1:
            raise ValueError(f"half_window ({self.half_window}) must be >= sg_polyorder/2 + 1")
        if self.snip_iterations < 1:
            raise ValueError("snip_iterations must be >= 1")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")
        if not self.mz_min < self.mz_max:
            raise ValueError("mz_min must be < mz_max")
        if self.noise_k < 0:
            raise ValueError("noise_k must be >= 0")
        return self

    @property
    def dim(self) -> int:
        return num_bins(self.mz_min, self.mz_max, self.bin_width)


# Corpora

class LabeledCorpus(ArrayModel):
    spectra: np.ndarray
    labels: np.ndarray
    vocab: List[str]
    mz_min: float = 2000.0
    bin_width: float = 3.0

    @field_validator("spectra", mode="before")
    @classmethod
    def _matrix(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 1 and array.size == 0:
            array = array.reshape(0, 0)
        if array.ndim != 2:
            raise ValueError(f"spectra must be an N×D matrix, got shape {array.shape}")
        return array

    @field_validator("labels", mode="before")
    @classmethod
    def _labels(cls, value):
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def check_rows(self):
        if self.labels.size != self.spectra.shape[0]:
            raise ValueError(f"{self.labels.size} labels for {self.spectra.shape[0]} spectra")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocab entries must be unique")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.vocab)):
            raise ValueError(f"label index outside vocab of size {len(self.vocab)}")
        if self.spectra.size and (not np.all(np.isfinite(self.spectra))
                                  or self.spectra.min() < 0 or self.spectra.max() > 1):
            raise ValueError("spectra values must lie in [0, 1]")
        return self

    @property
    def n(self) -> int:
        return int(self.spectra.shape[0])

    @property
    def dim(self) -> int:
        return int(self.spectra.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.vocab)

    def class_index(self, name: str) -> int:
        if name not in self.vocab:
            raise InvalidInputError(f"Unknown class '{name}'; vocab: {self.vocab}")
        return self.vocab.index(name)

    def class_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.vocab))
        return {name: int(counts[i]) for i, name in enumerate(self.vocab)}

    def of_class(self, name: str) -> np.ndarray:
        return self.spectra[self.labels == self.class_index(name)]

    def subset(self, indices) -> "LabeledCorpus":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledCorpus(spectra=self.spectra[indices].reshape(len(indices), self.dim), labels=self.labels[indices],
                             vocab=list(self.vocab), mz_min=self.mz_min, bin_width=self.bin_width)


class ToyCorpusSpec(BaseModel):
    num_classes: int = 3
    per_class: Union[int, List[int]] = 300
    bins: int = 200
    peaks_per_class: int = 5
    position_jitter: float = 1.0
    intensity_jitter: float = 0.1
    noise_level: float = 0.01
    seed: int = 17
    class_names: Optional[List[str]] = None

    @model_validator(mode="after")
    def check_spec(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.peaks_per_class < 1:
            raise ValueError("peaks_per_class must be >= 1")
        if self.bins < 10:
            raise ValueError("bins must be >= 10")
        if min(self.position_jitter, self.intensity_jitter, self.noise_level) < 0:
            raise ValueError("jitters and noise level must be >= 0")
        counts = self.counts()
        if len(counts) != self.num_classes or min(counts) < 0:
            raise ValueError("per_class must be one non-negative count or one per class")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names must list one name per class")
        return self

    def counts(self) -> List[int]:
        if isinstance(self.per_class, int):
            return [self.per_class] * self.num_classes
        return list(self.per_class)

    def names(self) -> List[str]:
        return self.class_names or [f"species_{i}" for i in range(self.num_classes)]


# Metrics

class KernelConfig(BaseModel):
    t: float = 8.0
    normalized: bool = True
    sparsity_eps: float = 1e-6

    @field_validator("t")
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("kernel bandwidth t must be > 0")
        return value


class MetricRow(BaseModel):
    label: str = Field(alias="class")
    pike_all_mean: float
    pike_all_std: float
    mmd2: float
    cd_mean: float
    cd_std: float
    nd_mean: float
    nd_std: float

    model_config = ConfigDict(populate_by_name=True)


class MetricReport(BaseModel):
    rows: List[MetricRow]
    mean: Dict[str, float] = Field(default_factory=dict)
    std: Dict[str, float] = Field(default_factory=dict)

    COLUMNS: ClassVar[List[str]] = ["pike_all_mean", "pike_all_std", "mmd2", "cd_mean", "cd_std", "nd_mean", "nd_std"]

    @model_validator(mode="after")
    def check_rows(self):
        labels = [row.label for row in self.rows]
        if len(set(labels)) != len(labels):
            raise ValueError("metric report classes must be unique")
        return self

    def row(self, label: str) -> MetricRow:
        return next(r for r in self.rows if r.label == label)


# Models

class VaeConfig(BaseModel):
    latent_dim: int = 8
    arch: Literal["mlp", "cnn1d"] = "cnn1d"
    hidden: List[int] = [512, 256, 128]
    conv_channels: List[int] = [16, 32, 64]
    kernel_size: int = 4
    embedding_dim: int = 16
    lr: float = 1e-3
    batch: int = 128
    max_epochs: int = 500
    patience: int = 30
    log_var_clamp: float = 10.0
    seed: int = 17

    @model_validator(mode="after")
    def check_sizes(self):
        if self.latent_dim < 1 or self.batch < 1 or self.embedding_dim < 1:
            raise ValueError("latent_dim, batch and embedding_dim must be >= 1")
        if len(self.hidden) != 3 or len(self.conv_channels) != 3:
            raise ValueError("the encoder and decoder use exactly three hidden layers")
        return self


class GanConfig(BaseModel):
    latent_dim: int = 32
    arch: Literal["mlp", "cnn1d"] = "cnn1d"
    hidden: List[int] = [128, 256, 512]
    conv_channels: List[int] = [64, 32, 16]
    kernel_size: int = 5
    lr_d: float = 1e-4
    lr_g: float = 2e-4
    dropout_g: float = 0.2
    dropout_d: float = 0.3
    batch: int = 128
    max_epochs: int = 200
    patience: int = 30
    class_weights: Literal["inverse-frequency", "none"] = "inverse-frequency"
    val_samples: int = 256
    collapse_samples: int = 128
    collapse_threshold: float = 0.01
    kernel_t: float = 8.0
    seed: int = 17

    @model_validator(mode="after")
    def check_rates(self):
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be > 0")
        if not (0 <= self.dropout_g < 1 and 0 <= self.dropout_d < 1):
            raise ValueError("dropout probabilities must lie in [0, 1)")
        if self.latent_dim < 1 or self.batch < 1:
            raise ValueError("latent_dim and batch must be >= 1")
        if len(self.hidden) != 3 or len(self.conv_channels) != 3:
            raise ValueError("generator and discriminator use exactly three hidden layers")
        return self


class DiffusionConfig(BaseModel):
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    unet_variant: Literal["S", "M", "L", "XL", "Deep", "Deep-micro"] = "Deep"
    kernel_size: int = 4
    in_channels: int = 1
    time_embedding_dim: int = 64
    batch: int = 64
    max_epochs: int = 200
    patience: int = 20
    lr: float = 1e-4
    noise_coeff_mode: Literal["sqrt_beta", "one_minus_alpha"] = "sqrt_beta"
    seed: int = 17

    @model_validator(mode="after")
    def check_schedule(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({self.beta_start}, {self.beta_end})")
        if self.T > 1 and not self.beta_start < self.beta_end:
            raise ValueError("beta_start must be < beta_end")
        if self.in_channels != 1:
            raise ValueError("spectra enter the denoiser as a single channel")
        return self


class NoiseSchedule(ArrayModel):
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """ᾱ_t with the ᾱ_0 = 1 convention."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_dict(self) -> Dict[str, List[float]]:
        return {"betas": self.betas.tolist(), "alphas": self.alphas.tolist(), "alpha_bars": self.alpha_bars.tolist()}


class MlpClassifierConfig(BaseModel):
    hidden: List[int] = [256, 32]
    max_epochs: int = 100
    patience: int = 10
    lr: float = 1e-3
    batch: int = 128
    seed: int = 17

    @field_validator("hidden")
    @classmethod
    def _positive(cls, value):
        if not value or min(value) < 1:
            raise ValueError("hidden sizes must be positive")
        return value


class DetectionReport(ArrayModel):
    classes: List[str]
    rates: Dict[str, Optional[float]]
    macro_mean: float
    confusion: np.ndarray
    confusion_percent: np.ndarray
    omitted: List[str] = Field(default_factory=list)


class RunConfig(BaseModel):
    config: Optional[str] = None
    seed: int = 17
    out: Optional[str] = None
    threads: int = 0

    @field_validator("seed")
    @classmethod
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("seed must be >= 0")
        return value

    @field_validator("threads")
    @classmethod
    def _threads_non_negative(cls, value):
        if value < 0:
            raise ValueError("threads must be >= 0 (0 = one per CPU)")
        return value
