import math

import numpy as np
import pytest

from core import tensor as T
from core.errors import InvalidInputError
from core.layers import gradients, snapshot
from core.optim import AdamState, adam_step
from models import GanConfig, ToyCorpusSpec
from modules.corpus import make_toy_corpus, stratified_split
from modules.maldigan import (GanModel, class_weights, detect_mode_collapse, discriminator_forward, gan_losses,
                              generate_gan, generator_forward, train_gan)
from modules.pike import class_distance, mmd2, neighbour_distance, pike_all

VOCAB = ["A", "B"]


def small_cfg(arch: str = "mlp", **overrides) -> GanConfig:
    values = dict(arch=arch, latent_dim=3, hidden=[6, 8, 10], conv_channels=[4, 3, 2], kernel_size=3)
    values.update(overrides)
    return GanConfig(**values)


def test_losses_at_an_undecided_discriminator():
    half = np.full(4, 0.5)
    loss_d, loss_g = gan_losses(half, half, np.ones(2), np.array([0, 1, 0, 1]))
    assert float(loss_d.value) == pytest.approx(2.0 * math.log(2.0), abs=1e-12)
    assert float(loss_g.value) == pytest.approx(math.log(2.0), abs=1e-12)


def test_inverse_frequency_weights_have_mean_one():
    weights = class_weights(np.array([0, 1, 1, 1]), 2)
    assert weights.tolist() == pytest.approx([1.5, 0.5])
    assert class_weights(np.array([0, 1, 1, 1]), 2, "none").tolist() == [1.0, 1.0]
    absent = class_weights(np.array([0, 0, 2]), 3)
    assert absent[1] == 0.0
    assert absent[[0, 2]].mean() == pytest.approx(1.0)


def test_weighted_losses_scale_with_class():
    d_real, d_fake = np.array([0.9, 0.9]), np.array([0.2, 0.2])
    plain, _ = gan_losses(d_real, d_fake, np.ones(2), np.array([0, 1]))
    weighted, _ = gan_losses(d_real, d_fake, np.array([1.5, 0.5]), np.array([0, 1]))
    assert float(weighted.value) == pytest.approx(float(plain.value))


@pytest.mark.parametrize("arch", ["mlp", "cnn1d"])
def test_forward_shapes_and_ranges(arch):
    model = GanModel(small_cfg(arch), 12, VOCAB)
    z = np.random.default_rng(0).standard_normal((5, 3))
    x = generator_forward(model, z, "B")
    assert x.shape == (5, 12)
    assert np.all((x > 0) & (x < 1))
    d = discriminator_forward(model, x, "B")
    assert d.shape == (5,)
    assert np.all((d > 0) & (d < 1))


def check_gradients(loss_fn, params):
    for p in params.values():
        p.grad = None
    T.backward(loss_fn())
    analytic = {name: p.grad_or_zeros().copy() for name, p in params.items()}

    def value():
        with T.inference():
            return float(loss_fn().value)

    for name, p in params.items():
        numeric = T.finite_difference_grad(value, p.value)
        assert T.relative_error(analytic[name], numeric) < 1e-4, name


@pytest.mark.parametrize("arch", ["mlp", "cnn1d"])
def test_discriminator_and_generator_loss_gradients(arch):
    model = GanModel(small_cfg(arch), 12, VOCAB)
    rng = np.random.default_rng(9)
    labels, weights = np.array([0, 1, 1]), np.array([1.5, 0.5])
    x, z = rng.uniform(size=(3, 12)), rng.standard_normal((3, 3))
    with T.inference():
        fake = model.generate(z, labels, "eval").value

    def loss_d():
        return gan_losses(model.discriminate(x, labels, "eval"), model.discriminate(fake, labels, "eval"),
                          weights, labels)[0]

    def loss_g():
        d_fake = model.discriminate(model.generate(z, labels, "eval"), labels, "eval")
        return gan_losses(np.full(3, 0.5), d_fake, weights, labels)[1]

    check_gradients(loss_d, model.discriminator_parameters())
    check_gradients(loss_g, model.generator_parameters())


@pytest.mark.parametrize("arch", ["mlp", "cnn1d"])
def test_zeroed_final_layers_output_one_half(arch):
    model = GanModel(small_cfg(arch), 12, VOCAB)
    for layer in (model.final_generator_layer(), model.final_discriminator_layer()):
        for p in layer.params.values():
            p.value = np.zeros_like(p.value)
    z = np.random.default_rng(1).standard_normal((3, 3))
    assert np.array_equal(generator_forward(model, z, "A"), np.full((3, 12), 0.5))
    assert np.array_equal(discriminator_forward(model, np.random.default_rng(2).uniform(size=(3, 12)), "A"),
                          np.full(3, 0.5))


def test_discriminator_dropout_only_in_train_mode():
    model = GanModel(small_cfg(dropout_d=0.5), 12, VOCAB)
    x = np.random.default_rng(3).uniform(size=(4, 12))
    assert np.array_equal(discriminator_forward(model, x, "A"), discriminator_forward(model, x, "A"))
    a = discriminator_forward(model, x, "A", mode="train", rng=np.random.default_rng(4))
    b = discriminator_forward(model, x, "A", mode="train", rng=np.random.default_rng(5))
    assert not np.array_equal(a, b)


def test_cnn_discriminator_needs_four_bins():
    with pytest.raises(InvalidInputError):
        GanModel(small_cfg("cnn1d"), 3, VOCAB)


def test_each_update_touches_only_its_own_network():
    model = GanModel(small_cfg(), 12, VOCAB)
    g_params, d_params = model.generator_parameters(), model.discriminator_parameters()
    assert not set(g_params) & set(d_params)
    rng = np.random.default_rng(6)
    labels = np.array([0, 1, 1])
    x = rng.uniform(size=(3, 12))

    with T.inference():
        fake = model.generate(rng.standard_normal((3, 3)), labels, "train", rng).value
    loss_d, _ = gan_losses(model.discriminate(x, labels, "train", rng), model.discriminate(fake, labels, "train", rng),
                           np.ones(2), labels)
    T.backward(loss_d)
    assert all(p.grad is None for p in g_params.values())

    before = snapshot(d_params)
    fake = model.generate(rng.standard_normal((3, 3)), labels, "train", rng)
    _, loss_g = gan_losses(np.full(3, 0.5), model.discriminate(fake, labels, "train", rng), np.ones(2), labels)
    for p in g_params.values():
        p.grad = None
    T.backward(loss_g)
    adam_step(g_params, gradients(g_params), AdamState(lr=0.1))
    assert all(np.array_equal(before[name], p.value) for name, p in d_params.items())


def test_training_history_and_validation_metric(toy_splits, gan_cfg):
    train, val, _ = toy_splits
    model = train_gan(train, val, gan_cfg, verbose=False)
    assert [row["epoch"] for row in model.history] == [1, 2]
    assert all({"loss_d", "loss_g", "val_mmd2"} <= set(row) for row in model.history)
    assert model.cost["epochs"] == 2
    assert isinstance(model.collapsed, list)


def test_constant_generator_is_flagged_as_collapsed(toy_corpus):
    model = GanModel(small_cfg(collapse_samples=6), toy_corpus.dim, toy_corpus.vocab)
    layer = model.final_generator_layer()
    for p in layer.params.values():
        p.value = np.zeros_like(p.value)
    assert detect_mode_collapse(model, toy_corpus) == toy_corpus.vocab


def test_generation_is_seeded(gan_cfg):
    model = GanModel(gan_cfg, 20, VOCAB)
    a = generate_gan(model, "A", 5, seed=3)
    assert np.array_equal(a, generate_gan(model, "A", 5, seed=3))
    assert np.allclose(a[:3], generate_gan(model, "A", 3, seed=3), rtol=0, atol=1e-12)
    assert not np.array_equal(a, generate_gan(model, "A", 5, seed=4))
    assert generate_gan(model, "B", 0, seed=3).shape == (0, 20)
    with pytest.raises(InvalidInputError):
        generate_gan(model, "A", -1, seed=3)


@pytest.mark.slow
def test_class_weighting_helps_the_minority_class(trend_gan_cfg):
    corpus = make_toy_corpus(ToyCorpusSpec(num_classes=2, per_class=[20, 300], bins=48, peaks_per_class=4))
    train, val = stratified_split(corpus, [0.8, 0.2], seed=17)
    scores = {}
    for mode in ("none", "inverse-frequency"):
        cfg = trend_gan_cfg.model_copy(update={"class_weights": mode})
        model = train_gan(train, val, cfg, verbose=False)
        scores[mode] = pike_all(generate_gan(model, "species_0", 40, seed=1), corpus.of_class("species_0"))[0]
    assert scores["inverse-frequency"] > scores["none"]


@pytest.mark.slow
def test_trained_generator_orders_metrics_by_class(toy_splits, trend_gan_cfg):
    train, val, _ = toy_splits
    model = train_gan(train, val, trend_gan_cfg, verbose=False)
    for name in train.vocab:
        generated = generate_gan(model, name, 20, seed=1)
        others = [o for o in train.vocab if o != name]
        own_pike = pike_all(generated, train.of_class(name))[0]
        assert all(own_pike > pike_all(generated, train.of_class(o))[0] for o in others), name
        own_mmd = mmd2(train.of_class(name), generated)
        assert own_mmd < min(mmd2(train.of_class(o), generated) for o in others), name
        assert class_distance(generated)[0] > 0.01
        assert neighbour_distance(generated, train.of_class(name))[0] > 0.0
