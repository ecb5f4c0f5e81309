import math

import numpy as np
import pytest
import torch
from torch import nn

from src.diffula.config import PriorConfig
from src.diffula.diffusion import (
    DiffusionModel,
    build_prior,
    denoise_from,
    evaluate_denoising_loss,
    forward_sample,
    load_checkpoint,
    make_schedule,
    prior_loss,
    reverse_step,
    sample,
    save_checkpoint,
    train_toy,
)
from src.diffula.unet import ToyUNet


class OracleNet(nn.Module):
    """Devolve o ruido verdadeiro de x_t em relacao a um x0 conhecido."""

    def __init__(self, x0: torch.Tensor, alpha_bar: torch.Tensor) -> None:
        super().__init__()
        self.anchor = nn.Parameter(torch.zeros(1, dtype=torch.float64))
        self.x0 = x0
        self.alpha_bar = alpha_bar

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        ab = self.alpha_bar[t - 1].view(-1, 1, 1, 1)
        return (x - torch.sqrt(ab) * self.x0) / torch.sqrt(1.0 - ab)


class ConstantNet(nn.Module):

    def __init__(self, value: float) -> None:
        super().__init__()
        self.value = nn.Parameter(torch.tensor(value, dtype=torch.float64))

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return self.value + 0.0 * x


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_schedule_invariants(kind):
    for timesteps in (20, 200, 1000):
        schedule = make_schedule(kind, timesteps)
        alpha_bar = schedule.alpha_bar
        assert schedule.T == timesteps
        assert bool(((schedule.beta > 0) & (schedule.beta < 1)).all())
        assert bool((alpha_bar[1:] < alpha_bar[:-1]).all())
        assert 0.0 < float(alpha_bar[-1]) < float(alpha_bar[0]) < 1.0


def test_linear_schedule_reference_values():
    schedule = make_schedule("linear", 1000)
    assert float(schedule.beta[0]) == pytest.approx(1e-4)
    assert float(schedule.beta[-1]) == pytest.approx(2e-2)
    with pytest.raises(ValueError):
        make_schedule("quadratic", 10)


def _zero_model(timesteps=50, shape=(1, 4, 4)):
    return DiffusionModel(
        schedule=make_schedule("linear", timesteps),
        eps_net=ToyUNet(shape[0], base_channels=4).double(),
        image_shape=shape,
    )


def test_forward_sample_noiseless_and_near_identity():
    model = _zero_model(timesteps=1000)
    x0 = torch.rand((1, 4, 4), dtype=torch.float64)
    t = 37
    alpha_bar = model.schedule.alpha_bar[t - 1]
    torch.testing.assert_close(forward_sample(model, x0, t, torch.zeros_like(x0)), torch.sqrt(alpha_bar) * x0)

    eps = torch.randn((1, 4, 4), dtype=torch.float64)
    beta_1 = float(model.schedule.beta[0])
    bound = math.sqrt(beta_1) * (float(x0.abs().max()) + float(eps.abs().max()))
    assert float((forward_sample(model, x0, 1, eps) - x0).abs().max()) <= bound


def test_forward_sample_moments():
    model = _zero_model(timesteps=50)
    x0 = torch.linspace(-1.0, 1.0, 16, dtype=torch.float64).view(1, 4, 4)
    t = 25
    draws = 10_000
    generator = torch.Generator().manual_seed(0)
    eps = torch.randn((draws, 1, 4, 4), generator=generator, dtype=torch.float64)
    x_t = forward_sample(model, x0.expand(draws, 1, 4, 4), t, eps)

    alpha_bar = float(model.schedule.alpha_bar[t - 1])
    expected_mean = math.sqrt(alpha_bar) * x0
    std = math.sqrt(1.0 - alpha_bar)

    # media agregada em 3 erros padrao, por pixel com folga para 16 testes
    residual = (x_t - expected_mean) / std
    assert abs(float(residual.mean())) <= 3.0 / math.sqrt(draws * 16)
    per_pixel = x_t.mean(dim=0) - expected_mean
    assert float(per_pixel.abs().max()) <= 4.5 * std / math.sqrt(draws)

    variance = float(x_t.var(dim=0).mean())
    # erro padrao da variancia amostral de uma normal: sigma^2 sqrt(2 / n)
    assert abs(variance - std ** 2) <= 3.0 * std ** 2 * math.sqrt(2.0 / (draws * 16))


def test_forward_sample_rejects_bad_timestep():
    model = _zero_model(timesteps=10)
    x0 = torch.zeros((1, 4, 4), dtype=torch.float64)
    with pytest.raises(ValueError):
        forward_sample(model, x0, 0, x0)
    with pytest.raises(ValueError):
        forward_sample(model, x0, 11, x0)


def test_prior_loss_with_zero_predictor():
    model = _zero_model()
    x0 = torch.rand((1, 4, 4), dtype=torch.float64)
    eps = torch.randn((1, 4, 4), dtype=torch.float64)
    loss, grad = prior_loss(model, x0, 10, eps)
    assert float(loss) == pytest.approx(float(eps.pow(2).sum()))
    assert float(grad.abs().max()) == 0.0


def test_prior_loss_constant_predictor_has_zero_gradient():
    model = DiffusionModel(make_schedule("linear", 20), ConstantNet(0.3), (1, 4, 4))
    x0 = torch.rand((1, 4, 4), dtype=torch.float64)
    eps = torch.randn((1, 4, 4), dtype=torch.float64)
    loss, grad = prior_loss(model, x0, 5, eps)
    assert float(loss) == pytest.approx(float((eps - 0.3).pow(2).sum()))
    assert torch.equal(grad, torch.zeros_like(x0))


def test_prior_loss_gradient_matches_finite_differences():
    # setup test problem
    # -------------------------------------------------------------------------
    torch.manual_seed(0)
    net = ToyUNet(1, base_channels=4).double()
    nn.init.normal_(net.out_conv.weight, std=0.1)
    nn.init.normal_(net.out_conv.bias, std=0.1)
    model = DiffusionModel(make_schedule("linear", 50), net, (1, 8, 8))

    generator = torch.Generator().manual_seed(1)
    x0 = torch.randn((1, 8, 8), generator=generator, dtype=torch.float64)
    eps = torch.randn((1, 8, 8), generator=generator, dtype=torch.float64)
    t = 17
    _, grad = prior_loss(model, x0, t, eps)

    # central differences on a few pixels
    # -------------------------------------------------------------------------
    h = 1e-6
    for index in [(0, 0, 0), (0, 3, 5), (0, 7, 7), (0, 4, 1)]:
        plus, minus = x0.clone(), x0.clone()
        plus[index] += h
        minus[index] -= h
        numeric = (float(prior_loss(model, plus, t, eps)[0]) - float(prior_loss(model, minus, t, eps)[0])) / (2 * h)
        np.testing.assert_allclose(float(grad[index]), numeric, rtol=1e-3, atol=1e-6)


def test_reverse_step_with_zero_predictor():
    model = _zero_model()
    x_t = torch.randn((1, 4, 4), dtype=torch.float64)
    alpha = float(model.schedule.alpha[9])
    torch.testing.assert_close(reverse_step(model, x_t, 10), x_t / math.sqrt(alpha))
    with pytest.raises(ValueError):
        reverse_step(model, x_t, 1, torch.ones_like(x_t))


@pytest.mark.parametrize("t", [1, 5, 20, 50])
def test_oracle_reverse_chain_recovers_x0(t):
    schedule = make_schedule("linear", 50)
    x0 = torch.rand((1, 1, 4, 4), generator=torch.Generator().manual_seed(t), dtype=torch.float64) * 2 - 1
    model = DiffusionModel(schedule, OracleNet(x0, schedule.alpha_bar), (1, 4, 4))
    eps = torch.randn((1, 1, 4, 4), generator=torch.Generator().manual_seed(100 + t), dtype=torch.float64)
    x_t = forward_sample(model, x0, t, eps)

    x = x_t
    for step in range(t, 0, -1):
        x = reverse_step(model, x, step)
    np.testing.assert_allclose(x.numpy(), x0.numpy(), rtol=1e-4, atol=1e-8)

    # com ruido semeado nos passos intermediarios o ultimo passo continua exato
    np.testing.assert_allclose(denoise_from(model, x_t, t, seed=3).numpy(), x0.numpy(), rtol=1e-4, atol=1e-8)


def test_denoise_from_is_seeded():
    model = _zero_model(timesteps=20)
    x = torch.randn((2, 1, 4, 4), dtype=torch.float64)
    torch.testing.assert_close(denoise_from(model, x, 1, seed=0), reverse_step(model, x, 1))
    a = denoise_from(model, x, 10, seed=5)
    b = denoise_from(model, x, 10, seed=5)
    assert torch.equal(a, b)
    assert not torch.equal(a, denoise_from(model, x, 10, seed=6))


def test_sample_shape():
    model = _zero_model(timesteps=5)
    images = sample(model, 3, seed=0)
    assert images.shape == (3, 1, 4, 4)
    assert bool(torch.isfinite(images).all())


def test_build_prior_checks_divisibility():
    with pytest.raises(ValueError):
        build_prior(PriorConfig(timesteps=10, image_shape=(1, 6, 6), base_channels=4))


def _toy_images(count=24, shape=(1, 8, 8), seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((count,) + shape, generator=generator) * 2 - 1


def test_training_is_reproducible_and_improves():
    config = PriorConfig(timesteps=20, image_shape=(1, 8, 8), base_channels=4, epochs=3, batch_size=8, lr=5e-3)
    images = _toy_images()
    a = train_toy(images, config)
    b = train_toy(images, config)
    np.testing.assert_allclose(a.metadata["heldout_loss"], b.metadata["heldout_loss"], rtol=1e-5)
    assert a.metadata["train_images"] + round(len(images) * config.holdout_fraction) == len(images)
    assert len(a.metadata["history"]) == 3


def test_training_rejects_wrong_shape():
    config = PriorConfig(timesteps=20, image_shape=(1, 8, 8), base_channels=4, epochs=1)
    with pytest.raises(ValueError):
        train_toy(_toy_images(shape=(3, 8, 8)), config)


def test_checkpoint_round_trip(tmp_path, toy_prior):
    path = save_checkpoint(toy_prior, tmp_path / "prior.pt")
    loaded = load_checkpoint(path)
    assert loaded.T == toy_prior.T
    assert loaded.image_shape == toy_prior.image_shape
    assert torch.equal(loaded.schedule.beta, toy_prior.schedule.beta)

    x = torch.randn((2, 3, 8, 8), generator=torch.Generator().manual_seed(0))
    t = torch.tensor([3, 17])
    with torch.no_grad():
        torch.testing.assert_close(loaded.predict_eps(x, t), toy_prior.predict_eps(x, t))
    assert evaluate_denoising_loss(loaded, x, 0) == pytest.approx(evaluate_denoising_loss(toy_prior, x, 0))

    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")


@pytest.mark.slow
def test_zero_dataset_learns_the_noise():
    config = PriorConfig(timesteps=50, image_shape=(1, 8, 8), base_channels=8, epochs=60, batch_size=32, lr=2e-3)
    images = torch.zeros((256, 1, 8, 8))
    model = train_toy(images, config, holdout=torch.zeros((64, 1, 8, 8)))
    # perda por imagem comparada a E||eps||^2 = 64
    assert model.metadata["heldout_loss"] <= 0.05 * 64


@pytest.mark.slow
def test_trained_prior_beats_untrained_baseline():
    config = PriorConfig(timesteps=100, image_shape=(1, 8, 8), base_channels=8, epochs=30, batch_size=32)
    from src.diffula.config import CorpusConfig
    from src.diffula.corpus import generate_corpus
    from src.diffula.diffusion import to_model_range

    collection, _ = generate_corpus(CorpusConfig(num_users=20, images_per_user=20, image_shape=(1, 8, 8)))
    model = train_toy(to_model_range(collection.images), config)
    assert model.metadata["heldout_loss"] < 0.8 * model.metadata["baseline_loss"]


@pytest.mark.slow
def test_denoising_lowers_prior_loss(trained_prior):
    from src.diffula.config import CorpusConfig
    from src.diffula.corpus import generate_corpus
    from src.diffula.diffusion import to_model_range

    # fixtures fora do corpus de treino do prior
    collection, _ = generate_corpus(
        CorpusConfig(num_users=10, images_per_user=5, image_shape=(3, 8, 8), min_images=1, seed=23),
    )
    clean = to_model_range(collection.images)
    t_star = 30

    def averaged_prior_loss(x, index):
        generator = torch.Generator().manual_seed(1000 + index)
        losses = []
        for t in (50, 100, 150, 200):
            eps = torch.randn(x.shape, generator=generator)
            loss, _ = prior_loss(trained_prior, x, t, eps)
            losses.append(float(loss))
        return sum(losses) / len(losses)

    generator = torch.Generator().manual_seed(0)
    improved = 0
    for i in range(50):
        x0 = clean[i:i + 1]
        noisy = forward_sample(trained_prior, x0, t_star, torch.randn(x0.shape, generator=generator))
        denoised = denoise_from(trained_prior, noisy, t_star, seed=i)
        improved += int(averaged_prior_loss(denoised, i) < averaged_prior_loss(noisy, i))
    assert improved >= 40
