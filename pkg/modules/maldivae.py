# modules/maldivae.py → MALDIVAE
# Role: Conditional VAE over binned spectra with a Soft-Bernoulli decoder.

# Responsibilities:

# encode: (x ⊕ label embedding) → (μ, log σ²), log σ² clamped to ±log_var_clamp

# reparameterize / decode: z = μ + σ ⊙ ε, (z ⊕ label embedding) → per-bin probability

# elbo_loss: Soft-Bernoulli cross-entropy + closed-form KL to N(0, I), summed per spectrum, averaged per batch

# train_vae / generate_vae / embed_vae (posterior means for external projection)

# modules/maldivae.py

from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import tensor as T
from core.console import log
from core.context import make_stream, sample_streams
from core.errors import InvalidInputError, NumericalError
from core.layers import Layer, LayerSpec, Sequential, act, conv, dense, gradients, zero_grad
from core.loop import TrainingLoop, minibatches
from core.optim import AdamState, adam_step
from core.tensor import DiffArray
from models import LabeledCorpus, VaeConfig

PROB_CLIP = 1e-7
EVAL_CHUNK = 256

ClassArg = Union[str, int, Sequence[Union[str, int]], np.ndarray]


def class_indices(vocab: List[str], c: ClassArg, n: int) -> np.ndarray:
    """Class names or indices → int array of length n; a single class is broadcast."""
    items = [c] if isinstance(c, (str, int, np.integer)) else list(c)
    out = []
    for item in items:
        if isinstance(item, str):
            if item not in vocab:
                raise InvalidInputError(f"Unknown class '{item}'; vocab: {vocab}")
            out.append(vocab.index(item))
        else:
            if not 0 <= int(item) < len(vocab):
                raise InvalidInputError(f"class index {item} outside vocab of size {len(vocab)}")
            out.append(int(item))
    labels = np.asarray(out, dtype=np.int64)
    if labels.size == 1 and n != 1:
        labels = np.full(n, labels[0], dtype=np.int64)
    if labels.size != n:
        raise InvalidInputError(f"{labels.size} class labels for {n} rows")
    return labels


class VaeModel:
    def __init__(self, cfg: VaeConfig, dim: int, vocab: List[str], rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.dim = dim
        self.vocab = list(vocab)
        self.history: List[Dict[str, float]] = []
        self.cost: Dict[str, float] = {}
        rng = rng or make_stream(cfg.seed, "maldivae-init")
        L, E, k = cfg.latent_dim, cfg.embedding_dim, cfg.kernel_size

        self.embedding = Layer(LayerSpec(kind="embedding", num_embeddings=len(self.vocab), embedding_dim=E),
                               rng, "embedding")
        if cfg.arch == "mlp":
            h1, h2, h3 = cfg.hidden
            self.encoder = Sequential([dense(dim + E, h1), act("relu"), dense(h1, h2), act("relu"),
                                       dense(h2, h3), act("relu")], rng, "encoder")
            head_in = h3
            self.decoder = Sequential([dense(L + E, h3), act("relu"), dense(h3, h2), act("relu"),
                                       dense(h2, h1), act("relu"), dense(h1, dim, init="xavier")], rng, "decoder")
        else:
            c1, c2, c3 = cfg.conv_channels
            self.half = (dim + 1) // 2
            self.encoder = Sequential([conv(1, c1, k), act("relu"), conv(c1, c2, k), act("relu"),
                                       act("maxpool1d"), conv(c2, c3, k), act("relu")], rng, "encoder")
            head_in = c3 * (dim // 2) + E
            self.decoder_in = Sequential([dense(L + E, c3 * self.half), act("relu")], rng, "decoder_in")
            self.decoder = Sequential([conv(c3, c2, k, upsample=True), act("relu"), conv(c2, c1, k), act("relu"),
                                       conv(c1, 1, k, init="xavier")], rng, "decoder")
        self.mu_head = Layer(dense(head_in, L, init="xavier"), rng, "encoder.mu")
        self.log_var_head = Layer(dense(head_in, L, init="xavier"), rng, "encoder.log_var")

    def parameters(self) -> Dict[str, DiffArray]:
        params: Dict[str, DiffArray] = {}
        parts = [self.embedding, self.encoder, self.mu_head, self.log_var_head, self.decoder]
        if self.cfg.arch == "cnn1d":
            parts.append(self.decoder_in)
        for part in parts:
            params.update(part.named_parameters())
        return params

    def final_decoder_layer(self) -> Layer:
        return self.decoder.layers[-1]

    def encode(self, x, labels: np.ndarray, mode: str = "train") -> Tuple[DiffArray, DiffArray]:
        x = T.as_array(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise InvalidInputError(f"expected spectra of shape (N, {self.dim}), got {x.shape}")
        emb = self.embedding(labels)
        if self.cfg.arch == "mlp":
            h = self.encoder(T.concat([x, emb], axis=1), mode)
        else:
            h = self.encoder(T.reshape(x, (x.shape[0], 1, self.dim)), mode)
            h = T.concat([T.reshape(h, (x.shape[0], -1)), emb], axis=1)
        clamp = self.cfg.log_var_clamp
        return self.mu_head(h), T.clip(self.log_var_head(h), -clamp, clamp)

    def decode(self, z, labels: np.ndarray, mode: str = "train") -> DiffArray:
        z = T.as_array(z)
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise InvalidInputError(f"expected latents of shape (N, {self.cfg.latent_dim}), got {z.shape}")
        h = T.concat([z, self.embedding(labels)], axis=1)
        if self.cfg.arch == "mlp":
            return T.sigmoid(self.decoder(h, mode))
        c3 = self.cfg.conv_channels[2]
        h = T.reshape(self.decoder_in(h, mode), (z.shape[0], c3, self.half))
        out = self.decoder(h, mode)
        return T.sigmoid(T.reshape(T.getitem(out, (slice(None), 0, slice(0, self.dim))), (z.shape[0], self.dim)))


def encode(model: VaeModel, x, c: ClassArg) -> Tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with T.inference():
        mu, log_var = model.encode(x, class_indices(model.vocab, c, x.shape[0]), mode="eval")
    return mu.value, log_var.value


def reparameterize(mu, log_var, eps) -> DiffArray:
    mu, log_var, eps = T.as_array(mu), T.as_array(log_var), T.as_array(eps)
    if not mu.shape == log_var.shape == eps.shape:
        raise InvalidInputError(f"reparameterize shapes differ: {mu.shape}, {log_var.shape}, {eps.shape}")
    return mu + T.exp(log_var * 0.5) * eps


def decode(model: VaeModel, z, c: ClassArg) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    with T.inference():
        return model.decode(z, class_indices(model.vocab, c, z.shape[0]), mode="eval").value


def elbo_loss(x, decoded, mu, log_var) -> Tuple[DiffArray, DiffArray, DiffArray]:
    """(total, recon, kl), each summed over bins / latents and averaged over the batch."""
    x, decoded, mu, log_var = T.as_array(x), T.as_array(decoded), T.as_array(mu), T.as_array(log_var)
    if x.shape != decoded.shape or mu.shape != log_var.shape or x.shape[0] != mu.shape[0]:
        raise InvalidInputError(f"inconsistent ELBO shapes: x {x.shape}, p̂ {decoded.shape}, μ {mu.shape}, log σ² {log_var.shape}")
    p = T.clip(decoded, PROB_CLIP, 1.0 - PROB_CLIP)
    nll = -(x * T.log(p) + (1.0 - x) * T.log(1.0 - p))
    recon = T.mean(T.sum_(nll, axis=1))
    kl = T.mean(T.sum_(1.0 + log_var - mu * mu - T.exp(log_var), axis=1)) * -0.5
    return recon + kl, recon, kl


def batch_loss(model: VaeModel, x: np.ndarray, labels: np.ndarray, eps: np.ndarray, mode: str = "train"):
    mu, log_var = model.encode(x, labels, mode)
    z = reparameterize(mu, log_var, eps)
    return elbo_loss(x, model.decode(z, labels, mode), mu, log_var)


def _check_splits(train: LabeledCorpus, val: LabeledCorpus) -> None:
    if train.n == 0 or val.n == 0:
        raise InvalidInputError("training and validation corpora must be non-empty")
    if train.vocab != val.vocab:
        raise InvalidInputError(f"train and val vocabularies differ: {train.vocab} vs {val.vocab}")
    if train.dim != val.dim:
        raise InvalidInputError(f"train has {train.dim} bins, val has {val.dim}")


def validation_elbo(model: VaeModel, val: LabeledCorpus, eps: np.ndarray) -> float:
    total = 0.0
    with T.inference():
        for start in range(0, val.n, EVAL_CHUNK):
            rows = slice(start, start + EVAL_CHUNK)
            loss, _, _ = batch_loss(model, val.spectra[rows], val.labels[rows], eps[rows], mode="eval")
            total += float(loss.value) * val.spectra[rows].shape[0]
    return total / val.n


def train_vae(train: LabeledCorpus, val: LabeledCorpus, cfg: Optional[VaeConfig] = None,
              verbose: bool = True) -> VaeModel:
    cfg = cfg or VaeConfig()
    _check_splits(train, val)
    model = VaeModel(cfg, train.dim, train.vocab)
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    rng = make_stream(cfg.seed, "maldivae-train")
    val_eps = make_stream(cfg.seed, "maldivae-val").standard_normal((val.n, cfg.latent_dim))

    def train_epoch(epoch: int) -> Dict[str, float]:
        sums = np.zeros(3)
        for idx in minibatches(train.n, cfg.batch, rng):
            zero_grad(params)
            eps = T.sample_gaussian((idx.size, cfg.latent_dim), rng).value
            total, recon, kl = batch_loss(model, train.spectra[idx], train.labels[idx], eps)
            if float(kl.value) < -1e-9:
                raise NumericalError(f"negative KL term {float(kl.value):.3g} at epoch {epoch}")
            T.backward(total)
            adam_step(params, gradients(params), state)
            sums += idx.size * np.array([float(total.value), float(recon.value), float(kl.value)])
        sums /= train.n
        return {"train_total": sums[0], "train_recon": sums[1], "train_kl": sums[2]}

    loop = TrainingLoop("vae", params, cfg.max_epochs, cfg.patience, monitor="val_total", verbose=verbose)
    model.history = loop.run(train_epoch, lambda epoch: validation_elbo(model, val, val_eps))
    model.cost = dict(loop.cost)
    return model


def generate_vae(model: VaeModel, c: ClassArg, n: int, seed: int) -> np.ndarray:
    """n spectra of class c; sample i draws z from its own stream, so batching does not change results."""
    if n < 0:
        raise InvalidInputError(f"cannot generate {n} spectra")
    labels = class_indices(model.vocab, c, 1)
    if n == 0:
        return np.zeros((0, model.dim))
    streams = sample_streams(seed, n, f"maldivae:{model.vocab[labels[0]]}")
    z = np.vstack([s.standard_normal(model.cfg.latent_dim) for s in streams])
    out = []
    with T.inference():
        for start in range(0, n, EVAL_CHUNK):
            block = z[start:start + EVAL_CHUNK]
            out.append(model.decode(block, np.full(block.shape[0], labels[0]), mode="eval").value)
    return np.clip(np.vstack(out), PROB_CLIP, 1.0 - PROB_CLIP)


def embed_vae(model: VaeModel, corpus: LabeledCorpus) -> np.ndarray:
    """Posterior means μ for every spectrum of a corpus sharing the model's vocab."""
    if corpus.vocab != model.vocab:
        raise InvalidInputError(f"corpus vocab {corpus.vocab} differs from model vocab {model.vocab}")
    if corpus.n == 0:
        return np.zeros((0, model.cfg.latent_dim))
    with T.inference():
        blocks = [model.encode(corpus.spectra[s:s + EVAL_CHUNK], corpus.labels[s:s + EVAL_CHUNK], mode="eval")[0].value
                  for s in range(0, corpus.n, EVAL_CHUNK)]
    log("vae", f"Embedded {corpus.n} spectra into {model.cfg.latent_dim} latent dimensions")
    return np.vstack(blocks)
