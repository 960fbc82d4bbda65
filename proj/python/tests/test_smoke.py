import math

import numpy as np
import pytest

import diffsteer as ds


@pytest.fixture(scope="module")
def toy():
    mixture, data, labels = ds.two_gaussian_setup(n=2048, seed=1)
    schedule = ds.build_schedule()
    spec = ds.DenoiserSpec()
    spec.encoder_widths = [32, 32]
    spec.bottleneck_width = 32
    spec.time_embedding_dim = 16
    opts = ds.DenoiserTrainOptions()
    opts.steps = 1500
    opts.seed = 7
    model = ds.train_denoiser(data, schedule, spec, opts)
    return mixture, data, labels, schedule, model


def test_schedule_matches_closed_form():
    s = ds.build_schedule()
    betas = np.linspace(1e-4, 0.02, 1000)
    abar = np.cumprod(1 - betas)
    assert s.steps == 1000
    assert s.alpha_bar(500) == pytest.approx(abar[499], rel=1e-12)
    assert s.sigma(500) == pytest.approx(math.sqrt((1 - abar[499]) / abar[499]), rel=1e-12)
    assert ds.make_ddim_steps(s, 100).step_indices[:3] == [1, 11, 21]


def test_pca_shrinkage_denoiser_is_posterior_mean():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 3)) * np.array([2.0, 1.0, 0.5])
    stats = ds.fit_pca(x, 3)
    cov = np.cov(x, rowvar=False)
    q = rng.normal(size=(5, 3))
    sigma = 0.7
    expected = stats.mean + (q - stats.mean) @ (cov @ np.linalg.inv(cov + sigma**2 * np.eye(3))).T
    np.testing.assert_allclose(ds.gaussian_denoise(stats, q, sigma), expected, atol=1e-10)


def test_rfm_direction_and_steered_sampling(toy):
    mixture, data, labels, schedule, model = toy
    batch = ds.collect_forward_activations(model, data[:1000], labels[:1000], schedule, 62, "enc0", 5)
    assert batch.features.shape == (1000, 32)
    hyper = ds.RfmHyper()
    hyper.bandwidth = 30.0
    direction = ds.train_rfm(batch, 0, hyper)
    assert np.linalg.norm(direction.vector) == pytest.approx(1.0, abs=1e-12)
    assert direction.block_name == "enc0"

    attr = ds.AttributeGuidance()
    attr.direction = direction
    attr.w_rfm = 1.0
    cfg = ds.SteeringConfig()
    cfg.attributes = [attr]
    cfg.rfm_window = ds.SigmaWindow(0.0, 3.5)
    cfg.seed = 11
    plain = ds.SteeringConfig()
    plain.seed = 11

    guided = ds.sample(model, schedule, cfg, 256)
    unguided = ds.sample(model, schedule, plain, 256)
    acc = lambda s: float(np.mean(mixture.classify_rows(s) == 0))
    assert abs(acc(unguided.samples) - 0.5) < 0.15
    assert acc(guided.samples) > acc(unguided.samples) + 0.25
    cost = ds.cost_report(guided.traces)
    assert cost.gradient_passes == 0
    assert cost.forward_passes <= 2 * 100 * 256

    again = ds.sample(model, schedule, cfg, 256)
    assert np.array_equal(again.samples, guided.samples)


def test_probe_and_frechet(toy):
    _, data, labels, schedule, model = toy
    batch = ds.collect_forward_activations(model, data[:800], labels[:800], schedule, 1, "enc0", 3)
    assert ds.linear_probe(batch) > 0.95
    rng = np.random.default_rng(1)
    a = rng.normal(size=(20000, 1))
    assert ds.frechet_distance(a, a + 3.0) == pytest.approx(9.0, abs=1e-8)


def test_artifact_round_trip(tmp_path, toy):
    _, data, _, _, model = toy
    path = tmp_path / "model.bin"
    ds.io.save_model(path, model)
    loaded = ds.io.load_model(path)
    x = data[:16]
    np.testing.assert_allclose(loaded.epsilon(x, 300), model.epsilon(x, 300), atol=1e-5)
    ds.io.write_matrix(tmp_path / "x.bin", x)
    np.testing.assert_array_equal(ds.io.read_matrix(tmp_path / "x.bin"), x.astype(np.float32).astype(np.float64))
