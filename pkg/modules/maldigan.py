# modules/maldigan.py → MALDIGAN
# Role: Conditional GAN over binned spectra; one-hot species conditioning at the input of
# both networks, class-weighted adversarial losses, validation by PIKE MMD².

# Responsibilities:

# generator_forward: (z ⊕ one-hot) → per-bin probabilities (sigmoid)

# discriminator_forward: (x ⊕ one-hot) → realness probability, dropout only in train mode

# class_weights / gan_losses: inverse-frequency weights with mean 1, non-saturating generator loss

# train_gan: 1 discriminator step + 1 generator step per batch, best-validation checkpoint,
# mode-collapse check after training; generate_gan

# modules/maldigan.py

from typing import Dict, List, Optional, Tuple

import numpy as np

from core import tensor as T
from core.console import log, warn
from core.context import make_stream, sample_streams
from core.errors import InvalidInputError
from core.layers import Sequential, act, conv, dense, gradients, zero_grad
from core.loop import TrainingLoop, minibatches
from core.optim import AdamState, adam_step
from core.tensor import DiffArray
from models import GanConfig, KernelConfig, LabeledCorpus
from modules.maldivae import ClassArg, class_indices
from modules.pike import class_distance, mmd2

PROB_CLIP = 1e-7
EVAL_CHUNK = 256


class GanModel:
    def __init__(self, cfg: GanConfig, dim: int, vocab: List[str], rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.dim = dim
        self.vocab = list(vocab)
        self.history: List[Dict[str, float]] = []
        self.cost: Dict[str, float] = {}
        self.collapsed: List[str] = []
        rng = rng or make_stream(cfg.seed, "maldigan-init")
        L, C, k = cfg.latent_dim, len(self.vocab), cfg.kernel_size
        drop_g, drop_d = act("dropout", p=cfg.dropout_g), act("dropout", p=cfg.dropout_d)
        leaky = act("leaky_relu")

        if cfg.arch == "mlp":
            h1, h2, h3 = cfg.hidden
            self.generator = Sequential([
                dense(L + C, h1), act("relu"), drop_g, dense(h1, h2), act("relu"), drop_g,
                dense(h2, h3), act("relu"), drop_g, dense(h3, dim, init="xavier"),
            ], rng, "generator")
            self.discriminator = Sequential([
                dense(dim + C, h3), leaky, drop_d, dense(h3, h2), leaky, drop_d,
                dense(h2, h1), leaky, drop_d, dense(h1, 1, init="xavier"),
            ], rng, "discriminator")
        else:
            if dim < 4:
                raise InvalidInputError(f"the cnn1d discriminator pools twice and needs at least 4 bins, got {dim}")
            c1, c2, c3 = cfg.conv_channels
            self.half = (dim + 1) // 2
            self.generator_in = Sequential([dense(L + C, c1 * self.half), act("relu")], rng, "generator_in")
            self.generator = Sequential([
                conv(c1, c2, k, upsample=True), act("relu"), drop_g,
                conv(c2, c3, k), act("relu"), conv(c3, 1, k, init="xavier"),
            ], rng, "generator")
            self.discriminator = Sequential([
                conv(1 + C, c3, k), leaky, act("maxpool1d"), drop_d,
                conv(c3, c2, k), leaky, act("maxpool1d"), drop_d,
                conv(c2, c1, k), leaky,
            ], rng, "discriminator")
            self.discriminator_out = Sequential([dense(c1 * (dim // 4), 1, init="xavier")], rng, "discriminator_out")

    def generator_parameters(self) -> Dict[str, DiffArray]:
        params = dict(self.generator.named_parameters())
        if self.cfg.arch == "cnn1d":
            params.update(self.generator_in.named_parameters())
        return params

    def discriminator_parameters(self) -> Dict[str, DiffArray]:
        params = dict(self.discriminator.named_parameters())
        if self.cfg.arch == "cnn1d":
            params.update(self.discriminator_out.named_parameters())
        return params

    def parameters(self) -> Dict[str, DiffArray]:
        return {**self.generator_parameters(), **self.discriminator_parameters()}

    def final_generator_layer(self):
        return self.generator.layers[-1]

    def final_discriminator_layer(self):
        return (self.discriminator_out if self.cfg.arch == "cnn1d" else self.discriminator).layers[-1]

    def generate(self, z, labels: np.ndarray, mode: str = "train", rng=None) -> DiffArray:
        z = T.as_array(z)
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise InvalidInputError(f"expected latents of shape (N, {self.cfg.latent_dim}), got {z.shape}")
        h = T.concat([z, T.one_hot(labels, len(self.vocab))], axis=1)
        if self.cfg.arch == "mlp":
            return T.sigmoid(self.generator(h, mode, rng))
        c1 = self.cfg.conv_channels[0]
        h = T.reshape(self.generator_in(h, mode, rng), (z.shape[0], c1, self.half))
        out = self.generator(h, mode, rng)
        return T.sigmoid(T.getitem(out, (slice(None), 0, slice(0, self.dim))))

    def discriminate(self, x, labels: np.ndarray, mode: str = "train", rng=None) -> DiffArray:
        x = T.as_array(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise InvalidInputError(f"expected spectra of shape (N, {self.dim}), got {x.shape}")
        onehot = T.one_hot(labels, len(self.vocab))
        n = x.shape[0]
        if self.cfg.arch == "mlp":
            logits = self.discriminator(T.concat([x, onehot], axis=1), mode, rng)
        else:
            channels = np.repeat(onehot[:, :, None], self.dim, axis=2)
            h = self.discriminator(T.concat([T.reshape(x, (n, 1, self.dim)), channels], axis=1), mode, rng)
            logits = self.discriminator_out(T.reshape(h, (n, -1)), mode, rng)
        return T.sigmoid(T.reshape(logits, (n,)))


def generator_forward(model: GanModel, z, c: ClassArg) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    with T.inference():
        return model.generate(z, class_indices(model.vocab, c, z.shape[0]), mode="eval").value


def discriminator_forward(model: GanModel, x, c: ClassArg, mode: str = "eval",
                          rng: Optional[np.random.Generator] = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with T.inference():
        return model.discriminate(x, class_indices(model.vocab, c, x.shape[0]), mode, rng).value


def class_weights(labels: np.ndarray, num_classes: int, mode: str = "inverse-frequency") -> np.ndarray:
    """w_c = N/(C·N_c) over the classes present, rescaled to mean 1; absent classes get 0."""
    if mode == "none":
        return np.ones(num_classes)
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.float64)
    present = counts > 0
    if not present.any():
        raise InvalidInputError("cannot weight classes of an empty label set")
    weights = np.zeros(num_classes)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    weights[present] /= weights[present].mean()
    return weights


def discriminator_loss(d_real, d_fake, w: np.ndarray) -> DiffArray:
    real = T.clip(d_real, PROB_CLIP, 1.0 - PROB_CLIP)
    fake = T.clip(d_fake, PROB_CLIP, 1.0 - PROB_CLIP)
    return -T.mean(T.log(real) * w + T.log(1.0 - fake) * w)


def generator_loss(d_fake, w: np.ndarray) -> DiffArray:
    return -T.mean(T.log(T.clip(d_fake, PROB_CLIP, 1.0 - PROB_CLIP)) * w)


def gan_losses(d_real, d_fake, weights: np.ndarray, labels: np.ndarray) -> Tuple[DiffArray, DiffArray]:
    w = np.asarray(weights, dtype=np.float64)[np.asarray(labels, dtype=np.int64)]
    return discriminator_loss(d_real, d_fake, w), generator_loss(d_fake, w)


def _check_splits(train: LabeledCorpus, val: LabeledCorpus) -> None:
    if train.n == 0 or val.n < 2:
        raise InvalidInputError("training corpus must be non-empty and validation needs at least two spectra")
    if train.vocab != val.vocab:
        raise InvalidInputError(f"train and val vocabularies differ: {train.vocab} vs {val.vocab}")
    if train.dim != val.dim:
        raise InvalidInputError(f"train has {train.dim} bins, val has {val.dim}")


def _sample(model: GanModel, z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    out = []
    with T.inference():
        for start in range(0, z.shape[0], EVAL_CHUNK):
            out.append(model.generate(z[start:start + EVAL_CHUNK], labels[start:start + EVAL_CHUNK], mode="eval").value)
    return np.clip(np.vstack(out), PROB_CLIP, 1.0 - PROB_CLIP)


def train_gan(train: LabeledCorpus, val: LabeledCorpus, cfg: Optional[GanConfig] = None,
              verbose: bool = True, threads: int = 1) -> GanModel:
    cfg = cfg or GanConfig()
    _check_splits(train, val)
    model = GanModel(cfg, train.dim, train.vocab)
    g_params, d_params = model.generator_parameters(), model.discriminator_parameters()
    g_state, d_state = AdamState(lr=cfg.lr_g), AdamState(lr=cfg.lr_d)
    weights = class_weights(train.labels, len(train.vocab), cfg.class_weights)
    kernel = KernelConfig(t=cfg.kernel_t)
    rng = make_stream(cfg.seed, "maldigan-train")

    val_rng = make_stream(cfg.seed, "maldigan-val")
    m = min(cfg.val_samples, val.n)
    val_real = val.spectra[val_rng.choice(val.n, size=m, replace=False)]
    val_labels = val.labels[val_rng.choice(val.n, size=cfg.val_samples, replace=True)]
    val_z = val_rng.standard_normal((cfg.val_samples, cfg.latent_dim))

    def train_epoch(epoch: int) -> Dict[str, float]:
        sums = np.zeros(2)
        for idx in minibatches(train.n, cfg.batch, rng):
            x, labels = train.spectra[idx], train.labels[idx]

            zero_grad(d_params)
            with T.inference():
                fake = model.generate(T.sample_gaussian((idx.size, cfg.latent_dim), rng), labels, "train", rng).value
            loss_d, _ = gan_losses(model.discriminate(x, labels, "train", rng),
                                   model.discriminate(fake, labels, "train", rng), weights, labels)
            T.backward(loss_d)
            adam_step(d_params, gradients(d_params), d_state)

            zero_grad(g_params)
            fake = model.generate(T.sample_gaussian((idx.size, cfg.latent_dim), rng), labels, "train", rng)
            loss_g = generator_loss(model.discriminate(fake, labels, "train", rng), weights[labels])
            T.backward(loss_g)
            adam_step(g_params, gradients(g_params), g_state)
            zero_grad(d_params)

            sums += idx.size * np.array([float(loss_d.value), float(loss_g.value)])
        sums /= train.n
        return {"loss_d": sums[0], "loss_g": sums[1]}

    def validate(epoch: int) -> float:
        return mmd2(val_real, _sample(model, val_z, val_labels), kernel, threads)

    loop = TrainingLoop("gan", model.parameters(), cfg.max_epochs, cfg.patience, monitor="val_mmd2", verbose=verbose)
    model.history = loop.run(train_epoch, validate)
    model.cost = dict(loop.cost)
    model.collapsed = detect_mode_collapse(model, train, threads)
    return model


def detect_mode_collapse(model: GanModel, train: LabeledCorpus, threads: int = 1) -> List[str]:
    """Classes whose generated batch has class distance below the collapse threshold."""
    cfg = model.cfg
    collapsed = []
    for name, count in train.class_counts().items():
        if count == 0:
            continue
        cd, _ = class_distance(generate_gan(model, name, cfg.collapse_samples, cfg.seed), KernelConfig(t=cfg.kernel_t),
                               threads)
        if cd < cfg.collapse_threshold:
            warn("gan", f"Possible mode collapse for '{name}': class distance {cd:.4f} < {cfg.collapse_threshold}")
            collapsed.append(name)
    if not collapsed:
        log("gan", "No mode collapse detected")
    return collapsed


def generate_gan(model: GanModel, c: ClassArg, n: int, seed: int) -> np.ndarray:
    """n spectra of class c; sample i draws z from its own stream."""
    if n < 0:
        raise InvalidInputError(f"cannot generate {n} spectra")
    label = class_indices(model.vocab, c, 1)[0]
    if n == 0:
        return np.zeros((0, model.dim))
    streams = sample_streams(seed, n, f"maldigan:{model.vocab[label]}")
    z = np.vstack([s.standard_normal(model.cfg.latent_dim) for s in streams])
    return _sample(model, z, np.full(n, label, dtype=np.int64))
