# modules/maldiffusion.py → MALDIffusion
# Role: Conditional DDPM over binned spectra with a 1-D U-Net noise predictor.

# Responsibilities:

# make_schedule: linear β_t, α_t = 1 − β_t, ᾱ_t = Π α_i (ᾱ_0 = 1)

# q_sample / diffusion_loss: forward corruption of [−1, 1]-rescaled spectra, MSE on predicted noise

# DenoiserModel: U-Net stages of residual blocks (conv → group norm → class FiLM → + time embedding → ReLU),
# max-pool down, nearest upsample + skip concat up; length padded to a multiple of 2^stages

# p_sample_step / sample: reverse chain from x_T ~ N(0, I), z = 0 at t = 1, per-chain seed streams

# modules/maldiffusion.py

from typing import Callable, Dict, List, Optional, Union
import math

import numpy as np

from core import tensor as T
from core.context import make_stream, sample_streams, unet_preset
from core.errors import ConfigError, InvalidInputError
from core.layers import Layer, LayerSpec, conv, dense, gradients, zero_grad
from core.loop import TrainingLoop, minibatches
from core.optim import AdamState, adam_step
from core.strategy import parallel_map
from core.tensor import DiffArray
from models import DiffusionConfig, LabeledCorpus, NoiseSchedule
from modules.maldivae import ClassArg, class_indices

EVAL_CHUNK = 128
Steps = Union[int, np.ndarray]
Denoiser = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


# Schedule and forward process

def make_schedule(cfg: DiffusionConfig) -> NoiseSchedule:
    if not 0 < cfg.beta_start <= cfg.beta_end < 1:
        raise ConfigError(f"invalid schedule endpoints ({cfg.beta_start}, {cfg.beta_end})")
    betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.T)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def schedule_from_dict(values: Dict[str, List[float]]) -> NoiseSchedule:
    return NoiseSchedule(betas=np.asarray(values["betas"]), alphas=np.asarray(values["alphas"]),
                         alpha_bars=np.asarray(values["alpha_bars"]))


def rescale_to_signed(x) -> np.ndarray:
    return 2.0 * np.asarray(x, dtype=np.float64) - 1.0


def rescale_to_unit(y) -> np.ndarray:
    return np.clip((np.asarray(y, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _alpha_bars(schedule: NoiseSchedule, t: Steps, allow_zero: bool = True) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    low = 0 if allow_zero else 1
    if t.size and (t.min() < low or t.max() > schedule.T):
        raise InvalidInputError(f"timestep outside [{low}, {schedule.T}]: {t.min()}..{t.max()}")
    padded = np.concatenate([[1.0], schedule.alpha_bars])
    return padded[t]


def q_sample(x0_signed, t: Steps, eps, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · ε; t is a scalar or one step per row."""
    x0, eps = np.asarray(x0_signed, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise InvalidInputError(f"x0 {x0.shape} and eps {eps.shape} differ")
    ab = _alpha_bars(schedule, t)
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# Denoiser

def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    return np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))


class ResBlock:
    """conv → GN → (1+γ(c))·h + δ(c) → + time → ReLU → conv → GN → ReLU, plus the (projected) input."""

    def __init__(self, in_c: int, out_c: int, k: int, groups: int, num_classes: int, temb_dim: int,
                 rng: np.random.Generator, name: str):
        g = math.gcd(groups, out_c)
        self.out_c = out_c
        self.conv1 = Layer(conv(in_c, out_c, k), rng, f"{name}.conv1")
        self.norm1 = Layer(LayerSpec(kind="groupnorm", channels=out_c, groups=g), rng, f"{name}.norm1")
        self.film = Layer(dense(num_classes, 2 * out_c, init="zeros"), rng, f"{name}.film")
        self.time = Layer(dense(temb_dim, out_c), rng, f"{name}.time")
        self.conv2 = Layer(conv(out_c, out_c, k), rng, f"{name}.conv2")
        self.norm2 = Layer(LayerSpec(kind="groupnorm", channels=out_c, groups=g), rng, f"{name}.norm2")
        self.skip = Layer(conv(in_c, out_c, 1), rng, f"{name}.skip") if in_c != out_c else None

    def layers(self) -> List[Layer]:
        return [layer for layer in (self.conv1, self.norm1, self.film, self.time, self.conv2, self.norm2, self.skip) if layer]

    def __call__(self, x: DiffArray, onehot: np.ndarray, temb: DiffArray) -> DiffArray:
        n = x.shape[0]
        h = self.norm1(self.conv1(x))
        film = self.film(onehot)
        gamma = T.reshape(T.getitem(film, (slice(None), slice(0, self.out_c))), (n, self.out_c, 1))
        delta = T.reshape(T.getitem(film, (slice(None), slice(self.out_c, 2 * self.out_c))), (n, self.out_c, 1))
        h = h * (gamma + 1.0) + delta
        h = T.relu(h + T.reshape(self.time(temb), (n, self.out_c, 1)))
        h = T.relu(self.norm2(self.conv2(h)))
        return h + (self.skip(x) if self.skip else x)


class DenoiserModel:
    def __init__(self, cfg: DiffusionConfig, dim: int, vocab: List[str], rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.dim = dim
        self.vocab = list(vocab)
        self.schedule = make_schedule(cfg)
        self.history: List[Dict[str, float]] = []
        self.cost: Dict[str, float] = {}
        preset = unet_preset(cfg.unet_variant)
        self.channels: List[int] = list(preset["channels"])
        blocks, groups, bottleneck = int(preset["res_blocks"]), int(preset["groups"]), int(preset["bottleneck"])
        rng = rng or make_stream(cfg.seed, "maldiffusion-init")
        k, C, E = cfg.kernel_size, len(self.vocab), cfg.time_embedding_dim

        self.factor = 2 ** len(self.channels)
        self.padded = int(math.ceil(dim / self.factor) * self.factor)
        self.time_mlp = Layer(dense(E, E), rng, "denoiser.time_mlp")
        self.stem = Layer(conv(cfg.in_channels, self.channels[0], k), rng, "denoiser.stem")

        self.down: List[List[ResBlock]] = []
        prev = self.channels[0]
        for s, ch in enumerate(self.channels):
            stage = []
            for b in range(blocks):
                stage.append(ResBlock(prev, ch, k, groups, C, E, rng, f"denoiser.down{s}.block{b}"))
                prev = ch
            self.down.append(stage)

        self.middle = [ResBlock(prev, bottleneck, k, groups, C, E, rng, "denoiser.middle.block0"),
                       ResBlock(bottleneck, bottleneck, k, groups, C, E, rng, "denoiser.middle.block1")]
        prev = bottleneck

        self.up: List[List[ResBlock]] = []
        for s in reversed(range(len(self.channels))):
            ch = self.channels[s]
            stage = [ResBlock(prev + ch, ch, k, groups, C, E, rng, f"denoiser.up{s}.block0")]
            stage += [ResBlock(ch, ch, k, groups, C, E, rng, f"denoiser.up{s}.block{b}") for b in range(1, blocks)]
            self.up.append(stage)
            prev = ch
        self.head = Layer(conv(prev, cfg.in_channels, k, init="xavier"), rng, "denoiser.head")

    def blocks(self) -> List[ResBlock]:
        return [b for stage in self.down for b in stage] + self.middle + [b for stage in self.up for b in stage]

    def parameters(self) -> Dict[str, DiffArray]:
        params: Dict[str, DiffArray] = {}
        for layer in [self.time_mlp, self.stem, self.head] + [l for b in self.blocks() for l in b.layers()]:
            params.update(layer.named_parameters())
        return params

    def forward(self, x_t, t: np.ndarray, labels: np.ndarray) -> DiffArray:
        x_t = T.as_array(x_t)
        if x_t.ndim != 2 or x_t.shape[1] != self.dim:
            raise InvalidInputError(f"expected x_t of shape (N, {self.dim}), got {x_t.shape}")
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        _alpha_bars(self.schedule, t, allow_zero=False)
        onehot = T.one_hot(labels, len(self.vocab))
        temb = T.relu(self.time_mlp(sinusoidal_embedding(t, self.cfg.time_embedding_dim)))

        h = T.pad_last(T.reshape(x_t, (n, 1, self.dim)), 0, self.padded - self.dim)
        h = self.stem(h)
        skips = []
        for stage in self.down:
            for block in stage:
                h = block(h, onehot, temb)
            skips.append(h)
            h = T.maxpool1d(h)
        for block in self.middle:
            h = block(h, onehot, temb)
        for stage in self.up:
            h = T.concat([T.upsample_nearest(h, 2), skips.pop()], axis=1)
            for block in stage:
                h = block(h, onehot, temb)
        out = self.head(h)
        return T.getitem(out, (slice(None), 0, slice(0, self.dim)))


def denoiser_forward(model: DenoiserModel, x_t, t: Steps, c: ClassArg) -> np.ndarray:
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    with T.inference():
        return model.forward(x_t, t, class_indices(model.vocab, c, x_t.shape[0])).value


def diffusion_loss(x0, labels: np.ndarray, model: DenoiserModel, schedule: NoiseSchedule,
                   rng: np.random.Generator) -> DiffArray:
    """Per-sample t ~ U{1..T} and ε ~ N(0, I); mean squared error between ε and ε̂."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise InvalidInputError("diffusion_loss needs a non-empty batch")
    t = rng.integers(1, schedule.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    return noise_mse(model, x0, labels, t, eps, schedule)


def noise_mse(model: DenoiserModel, x0: np.ndarray, labels: np.ndarray, t: np.ndarray, eps: np.ndarray,
              schedule: NoiseSchedule) -> DiffArray:
    x_t = q_sample(rescale_to_signed(x0), t, eps, schedule)
    diff = model.forward(x_t, t, labels) - eps
    return T.mean(diff * diff)


# Reverse process

def noise_coefficient(schedule: NoiseSchedule, t: int, mode: str = "sqrt_beta") -> float:
    beta = float(schedule.betas[t - 1])
    if mode == "sqrt_beta":
        return math.sqrt(beta)
    if mode == "one_minus_alpha":
        return 1.0 - float(schedule.alphas[t - 1])
    raise ConfigError(f"unknown noise_coeff_mode '{mode}'")


def reverse_step(x_t, eps_hat, t: int, z, schedule: NoiseSchedule, noise_coeff_mode: str = "sqrt_beta") -> np.ndarray:
    """x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) · ε̂)/√α_t + σ_t z, with z = 0 at t = 1."""
    if not 1 <= t <= schedule.T:
        raise InvalidInputError(f"timestep {t} outside [1, {schedule.T}]")
    alpha, alpha_bar = float(schedule.alphas[t - 1]), float(schedule.alpha_bars[t - 1])
    mean = (np.asarray(x_t) - (1.0 - alpha) / math.sqrt(1.0 - alpha_bar) * np.asarray(eps_hat)) / math.sqrt(alpha)
    if t == 1:
        return mean
    return mean + noise_coefficient(schedule, t, noise_coeff_mode) * np.asarray(z)


def p_sample_step(model: DenoiserModel, x_t, t: int, c: ClassArg, z, schedule: Optional[NoiseSchedule] = None,
                  noise_coeff_mode: Optional[str] = None) -> np.ndarray:
    schedule = schedule or model.schedule
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    if not 1 <= t <= schedule.T:
        raise InvalidInputError(f"timestep {t} outside [1, {schedule.T}]")
    eps_hat = denoiser_forward(model, x_t, np.full(x_t.shape[0], t), c)
    return reverse_step(x_t, eps_hat, t, z, schedule, noise_coeff_mode or model.cfg.noise_coeff_mode)


def sample(model: DenoiserModel, c: ClassArg, n: int, schedule: Optional[NoiseSchedule] = None, seed: int = 17,
           threads: int = 1, denoiser: Optional[Denoiser] = None) -> np.ndarray:
    """
    n chains of exactly T denoiser evaluations each, rescaled to [0, 1]. Chain i draws x_T and
    every z from its own stream, so chunking and thread count leave the result unchanged.
    `denoiser(x_t, t, labels) -> ε̂` replaces the network when given.
    """
    if n < 0:
        raise InvalidInputError(f"cannot generate {n} spectra")
    schedule = schedule or model.schedule
    label = class_indices(model.vocab, c, 1)[0]
    if n == 0:
        return np.zeros((0, model.dim))

    def predict(x_t, t, labels):
        with T.inference():
            return model.forward(x_t, t, labels).value

    predict_fn = denoiser or predict
    streams = sample_streams(seed, n, f"maldiffusion:{model.vocab[label]}")

    def run_chain(block: range) -> np.ndarray:
        chunk = [streams[i] for i in block]
        labels = np.full(len(chunk), label, dtype=np.int64)
        x = np.vstack([s.standard_normal(model.dim) for s in chunk])
        for t in range(schedule.T, 0, -1):
            eps_hat = predict_fn(x, np.full(len(chunk), t), labels)
            z = np.vstack([s.standard_normal(model.dim) for s in chunk]) if t > 1 else np.zeros_like(x)
            x = reverse_step(x, eps_hat, t, z, schedule, model.cfg.noise_coeff_mode)
        return rescale_to_unit(x)

    blocks = [range(s, min(s + EVAL_CHUNK, n)) for s in range(0, n, EVAL_CHUNK)]
    return np.vstack(parallel_map(run_chain, blocks, threads))


def generate_diffusion(model: DenoiserModel, c: ClassArg, n: int, seed: int, threads: int = 1) -> np.ndarray:
    return sample(model, c, n, model.schedule, seed, threads)


# Training

def train_diffusion(train: LabeledCorpus, val: LabeledCorpus, cfg: Optional[DiffusionConfig] = None,
                    verbose: bool = True) -> DenoiserModel:
    cfg = cfg or DiffusionConfig()
    if train.n == 0 or val.n == 0:
        raise InvalidInputError("training and validation corpora must be non-empty")
    if train.vocab != val.vocab or train.dim != val.dim:
        raise InvalidInputError("train and val must share vocabulary and bin count")
    model = DenoiserModel(cfg, train.dim, train.vocab)
    schedule = model.schedule
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    rng = make_stream(cfg.seed, "maldiffusion-train")

    val_rng = make_stream(cfg.seed, "maldiffusion-val")
    val_t = val_rng.integers(1, schedule.T + 1, size=val.n)
    val_eps = val_rng.standard_normal((val.n, val.dim))

    def train_epoch(epoch: int) -> Dict[str, float]:
        total = 0.0
        for idx in minibatches(train.n, cfg.batch, rng):
            zero_grad(params)
            loss = diffusion_loss(train.spectra[idx], train.labels[idx], model, schedule, rng)
            T.backward(loss)
            adam_step(params, gradients(params), state)
            total += float(loss.value) * idx.size
        return {"train_loss": total / train.n}

    def validate(epoch: int) -> float:
        total = 0.0
        with T.inference():
            for s in range(0, val.n, EVAL_CHUNK):
                rows = slice(s, s + EVAL_CHUNK)
                loss = noise_mse(model, val.spectra[rows], val.labels[rows], val_t[rows], val_eps[rows], schedule)
                total += float(loss.value) * val.spectra[rows].shape[0]
        return total / val.n

    loop = TrainingLoop("diffusion", params, cfg.max_epochs, cfg.patience, monitor="val_loss", verbose=verbose)
    model.history = loop.run(train_epoch, validate)
    model.cost = dict(loop.cost)
    return model
