import math

import numpy as np
import pytest

from core import tensor as T
from core.context import sample_streams
from core.errors import ConfigError, InvalidInputError
from models import DiffusionConfig
from modules.corpus import stratified_split
from modules.maldiffusion import (DenoiserModel, denoiser_forward, diffusion_loss, generate_diffusion,
                                  make_schedule, noise_coefficient, noise_mse, p_sample_step, q_sample,
                                  rescale_to_signed, rescale_to_unit, reverse_step, sample, sinusoidal_embedding,
                                  train_diffusion)
from modules.pike import class_distance, neighbour_distance, pike_all

VOCAB = ["A", "B"]


def micro_cfg(**overrides) -> DiffusionConfig:
    values = dict(T=10, unet_variant="Deep-micro", time_embedding_dim=8)
    values.update(overrides)
    return DiffusionConfig(**values)


def test_single_step_schedule():
    schedule = make_schedule(DiffusionConfig(T=1, beta_start=1e-4, beta_end=1e-4))
    assert schedule.alpha_bars.tolist() == pytest.approx([0.9999])
    assert schedule.alpha_bar(0) == 1.0


def test_default_schedule_reaches_noise():
    schedule = make_schedule(DiffusionConfig())
    assert schedule.T == 1000
    assert schedule.betas[0] == pytest.approx(1e-4)
    assert schedule.betas[-1] == pytest.approx(2e-2)
    assert schedule.alpha_bars[-1] < 1e-4
    assert np.all(np.diff(schedule.alpha_bars) < 0)


def test_invalid_schedules_are_rejected():
    with pytest.raises(ValueError):
        DiffusionConfig(T=0)
    with pytest.raises(ValueError):
        DiffusionConfig(beta_start=0.1, beta_end=0.01)


def test_rescaling_round_trip_and_clamp():
    x = np.array([0.0, 0.25, 1.0])
    assert rescale_to_signed(x).tolist() == [-1.0, -0.5, 1.0]
    assert np.allclose(rescale_to_unit(rescale_to_signed(x)), x)
    assert rescale_to_unit([-3.0, 3.0]).tolist() == [0.0, 1.0]


def test_q_sample_endpoints():
    schedule = make_schedule(micro_cfg())
    x0, eps = np.array([[0.5, -0.5]]), np.array([[1.0, 2.0]])
    assert np.array_equal(q_sample(x0, 0, eps, schedule), x0)
    ab = schedule.alpha_bars[4]
    assert np.allclose(q_sample(x0, 5, eps, schedule), math.sqrt(ab) * x0 + math.sqrt(1 - ab) * eps)
    rows = q_sample(np.vstack([x0, x0]), np.array([1, 10]), np.vstack([eps, eps]), schedule)
    assert np.allclose(rows[1], math.sqrt(schedule.alpha_bars[9]) * x0[0] + math.sqrt(1 - schedule.alpha_bars[9]) * eps[0])
    with pytest.raises(InvalidInputError):
        q_sample(x0, 11, eps, schedule)


def test_reverse_step_inverts_one_forward_step_with_true_noise():
    schedule = make_schedule(micro_cfg())
    rng = np.random.default_rng(0)
    x0, eps = rng.uniform(-1, 1, (3, 7)), rng.standard_normal((3, 7))
    x1 = q_sample(x0, 1, eps, schedule)
    assert np.allclose(reverse_step(x1, eps, 1, rng.standard_normal((3, 7)), schedule), x0, atol=1e-12)


def test_noise_coefficient_modes():
    schedule = make_schedule(micro_cfg())
    assert noise_coefficient(schedule, 3) == pytest.approx(math.sqrt(schedule.betas[2]))
    assert noise_coefficient(schedule, 3, "one_minus_alpha") == pytest.approx(schedule.betas[2])
    with pytest.raises(ConfigError):
        noise_coefficient(schedule, 3, "other")


def test_sampling_chain_matches_reference_loop():
    cfg = micro_cfg(T=4)
    model = DenoiserModel(cfg, 6, VOCAB)
    schedule = model.schedule
    out = sample(model, "B", 3, seed=5, denoiser=lambda x, t, labels: np.zeros_like(x))

    expected = []
    for stream in sample_streams(5, 3, "maldiffusion:B"):
        x = stream.standard_normal(6)
        for t in range(4, 0, -1):
            z = stream.standard_normal(6) if t > 1 else np.zeros(6)
            x = x / math.sqrt(schedule.alphas[t - 1]) + (math.sqrt(schedule.betas[t - 1]) * z if t > 1 else 0.0)
        expected.append(np.clip((x + 1.0) / 2.0, 0.0, 1.0))
    assert np.allclose(out, np.vstack(expected), atol=1e-12)


def test_sampling_runs_exactly_t_denoiser_calls_per_chain():
    model = DenoiserModel(micro_cfg(T=5), 6, VOCAB)
    calls = []

    def counting(x, t, labels):
        calls.append(int(t[0]))
        return np.zeros_like(x)

    sample(model, "A", 2, seed=1, denoiser=counting)
    assert calls == [5, 4, 3, 2, 1]


def test_sampling_is_independent_of_thread_count():
    model = DenoiserModel(micro_cfg(T=3), 8, VOCAB)
    one = sample(model, "A", 4, seed=2, threads=1)
    four = sample(model, "A", 4, seed=2, threads=4)
    assert np.array_equal(one, four)
    assert one.shape == (4, 8)
    assert one.min() >= 0.0 and one.max() <= 1.0


@pytest.mark.parametrize("dim", [201, 6000])
def test_denoiser_preserves_the_spectrum_length(dim):
    model = DenoiserModel(micro_cfg(), dim, VOCAB)
    eps_hat = denoiser_forward(model, np.random.default_rng(0).standard_normal((1, dim)), 3, "A")
    assert eps_hat.shape == (1, dim)


def test_denoiser_rejects_timestep_zero():
    model = DenoiserModel(micro_cfg(), 16, VOCAB)
    with pytest.raises(InvalidInputError):
        denoiser_forward(model, np.zeros((1, 16)), 0, "A")


def test_unknown_unet_variant():
    with pytest.raises(ValueError):
        DiffusionConfig(unet_variant="XXL")


def test_zero_head_predicts_no_noise_so_loss_is_noise_power():
    model = DenoiserModel(micro_cfg(), 32, VOCAB)
    for p in model.head.params.values():
        p.value = np.zeros_like(p.value)
    x0 = np.random.default_rng(1).uniform(size=(40, 32))
    with T.inference():
        loss = diffusion_loss(x0, np.zeros(40, dtype=np.int64), model, model.schedule, np.random.default_rng(2))
    assert float(loss.value) == pytest.approx(1.0, abs=0.1)


def sampled_gradient_error(loss_fn, params, per_param=2, seed=0, h=1e-5):
    """Relative error between backprop and central differences over a few entries of every parameter."""
    for p in params.values():
        p.grad = None
    T.backward(loss_fn())

    def value():
        with T.inference():
            return float(loss_fn().value)

    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for p in params.values():
        flat, grad = p.value.reshape(-1), p.grad_or_zeros().reshape(-1)
        for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            analytic.append(grad[i])
            numeric.append((up - down) / (2.0 * h))
    return T.relative_error(np.array(analytic), np.array(numeric))


def test_noise_mse_gradient_flows_to_every_block():
    model = DenoiserModel(micro_cfg(), 16, VOCAB)
    rng = np.random.default_rng(3)
    x0, labels, t, eps = rng.uniform(size=(2, 16)), np.array([0, 1]), np.array([2, 7]), rng.standard_normal((2, 16))

    def loss():
        return noise_mse(model, x0, labels, t, eps, model.schedule)

    params = model.parameters()
    assert len(model.channels) == 2
    assert sampled_gradient_error(loss, params) < 1e-4
    assert all(p.grad is not None for p in params.values())


def test_q_sample_matches_forward_marginal_moments():
    schedule = make_schedule(DiffusionConfig())
    x0 = np.array([0.8, -0.3, 0.0, -1.0])
    eps = np.random.default_rng(11).standard_normal((10_000, 4))
    x_t = q_sample(np.broadcast_to(x0, eps.shape), 500, eps, schedule)
    ab = schedule.alpha_bars[499]
    assert np.allclose(x_t.mean(axis=0), math.sqrt(ab) * x0, atol=0.03)
    assert np.allclose(x_t.var(axis=0), 1.0 - ab, rtol=0.05)


def test_full_chain_with_true_noise_recovers_the_clean_spectrum():
    model = DenoiserModel(micro_cfg(T=50), 12, VOCAB)
    schedule = model.schedule
    target = np.random.default_rng(12).uniform(size=12)
    x0 = rescale_to_signed(target)

    def true_noise(x, t, labels):
        ab = schedule.alpha_bars[np.asarray(t) - 1].reshape(-1, 1)
        return (x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)

    out = sample(model, "A", 3, seed=8, denoiser=true_noise)
    assert np.allclose(out, np.tile(target, (3, 1)), atol=1e-9)


def test_p_sample_step_shape():
    model = DenoiserModel(micro_cfg(), 16, VOCAB)
    rng = np.random.default_rng(4)
    out = p_sample_step(model, rng.standard_normal((3, 16)), 5, "B", rng.standard_normal((3, 16)))
    assert out.shape == (3, 16)


def test_sinusoidal_embedding_shape():
    emb = sinusoidal_embedding(np.array([1, 2, 3]), 9)
    assert emb.shape == (3, 9)
    assert np.all(emb[:, -1] == 0.0)


def test_training_and_generation(toy_splits, diffusion_cfg):
    train, val, _ = toy_splits
    model = train_diffusion(train, val, diffusion_cfg, verbose=False)
    assert [row["epoch"] for row in model.history] == [1]
    assert set(model.history[0]) == {"epoch", "train_loss", "val_loss"}
    generated = generate_diffusion(model, "species_2", 3, seed=1)
    assert generated.shape == (3, train.dim)
    assert np.array_equal(generated, generate_diffusion(model, "species_2", 3, seed=1))


@pytest.mark.slow
def test_trained_denoiser_separates_classes(toy_corpus):
    train, val = stratified_split(toy_corpus, [0.8, 0.2], seed=17)
    cfg = micro_cfg(T=50, beta_end=0.2, batch=16, max_epochs=40, patience=40, lr=2e-3)
    model = train_diffusion(train, val, cfg, verbose=False)
    assert min(r["val_loss"] for r in model.history) < model.history[0]["val_loss"]
    for name in toy_corpus.vocab:
        generated = generate_diffusion(model, name, 10, seed=3)
        own = pike_all(generated, toy_corpus.of_class(name))[0]
        others = [pike_all(generated, toy_corpus.of_class(o))[0] for o in toy_corpus.vocab if o != name]
        assert own > max(others)
        assert class_distance(generated)[0] > 0.01
        assert neighbour_distance(generated, train.of_class(name))[0] > 0.0
