import numpy as np
import pytest

from fedgan.data import add_pixel_noise, fixture_paths, load_labeled_set
from fedgan.denoiser import (
    Autoencoder,
    DenoisingAutoencoder,
    denoise,
    init_autoencoder,
    load_autoencoder,
    mismatch_probe,
    save_autoencoder,
    train_autoencoder,
)
from fedgan.rng import derive_seed
from fedgan.tensor import ParamSet, ShapeError, Tensor

from oracles import fd_gradcheck, sample_coordinates


@pytest.fixture(scope="module")
def fixture_sets():
    paths = fixture_paths()
    return (
        load_labeled_set(paths["train_images"], paths["train_labels"]),
        load_labeled_set(paths["heldout_images"], paths["heldout_labels"]),
    )


@pytest.fixture(scope="module")
def trained(fixture_sets):
    _, heldout = fixture_sets
    return train_autoencoder(heldout, 0.2, epochs=12, batch=32, seed=3)


def _mse(a: Tensor, b: Tensor) -> float:
    return float(np.mean((a.data - b.data) ** 2))


def test_zero_epochs_returns_initialized_model(fixture_sets):
    train, _ = fixture_sets
    model = train_autoencoder(train, 0.2, epochs=0, batch=32, seed=9)
    assert model.params == init_autoencoder(derive_seed(9, 0))
    assert model.trained_noise_level == 0.2
    assert model.train_losses == ()


def test_training_is_deterministic(fixture_sets):
    _, heldout = fixture_sets
    a = train_autoencoder(heldout, 0.2, epochs=2, batch=64, seed=5)
    b = train_autoencoder(heldout, 0.2, epochs=2, batch=64, seed=5)
    assert a.params == b.params
    assert a.train_losses == b.train_losses


def test_five_epochs_beats_noisy_input_on_heldout(fixture_sets):
    train, heldout = fixture_sets
    model = train_autoencoder(train, 0.2, epochs=5, batch=32, seed=3)
    noisy = add_pixel_noise(heldout.images, 0.2, seed=99)
    denoised = denoise(model, noisy)
    assert _mse(denoised, heldout.images) < _mse(noisy, heldout.images)


def test_zero_level_training_beats_untrained_reconstruction(fixture_sets):
    _, heldout = fixture_sets
    trained0 = train_autoencoder(heldout, 0.0, epochs=3, batch=32, seed=6)
    untrained = Autoencoder(params=init_autoencoder(derive_seed(6, 0)), trained_noise_level=0.0)
    mse_trained = _mse(denoise(trained0, heldout.images), heldout.images)
    mse_untrained = _mse(denoise(untrained, heldout.images), heldout.images)
    assert mse_trained < mse_untrained


def test_training_loss_non_increasing_within_tolerance(trained):
    losses = trained.train_losses
    assert len(losses) == 12
    assert all(b <= a * 1.05 for a, b in zip(losses, losses[1:]))


def test_denoise_empty_batch(trained):
    out = denoise(trained, Tensor(np.zeros((0, 1, 28, 28))))
    assert out.shape == (0, 1, 28, 28)


def test_denoise_deterministic(trained, fixture_sets):
    _, heldout = fixture_sets
    x = Tensor(heldout.images.data[:8])
    assert denoise(trained, x).data.tobytes() == denoise(trained, x).data.tobytes()


def test_denoise_output_range_fuzz(trained):
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = Tensor(np.clip(rng.uniform(-0.2, 1.2, size=(4, 1, 28, 28)), 0, 1))
        out = denoise(trained, x)
        assert out.data.min() >= 0.0
        assert out.data.max() <= 1.0


def test_denoise_shape_mismatch(trained):
    with pytest.raises(ShapeError):
        denoise(trained, Tensor(np.zeros((2, 1, 14, 14))))


def test_denoise_twice_changes_less_than_once(trained, fixture_sets):
    _, heldout = fixture_sets
    once = denoise(trained, heldout.images)
    twice = denoise(trained, once)
    first = float(np.mean(np.abs(once.data - heldout.images.data)))
    second = float(np.mean(np.abs(twice.data - once.data)))
    assert second < first


def test_mismatch_probe_rows(trained, fixture_sets):
    _, heldout = fixture_sets
    results = mismatch_probe(trained, heldout.images, [0.0, 0.2, 1.0], seed=2)
    by_level = {r.level: r for r in results}
    # at the trained level the model helps
    assert by_level[0.2].mse_denoised < by_level[0.2].mse_noisy
    # on clean input it inflicts damage (the gray-layer mechanism)
    assert by_level[0.0].mse_noisy == 0.0
    assert by_level[0.0].mse_denoised > 0.0
    # total at the extreme level
    assert np.isfinite(by_level[1.0].mse_denoised)


def test_gray_layer_shifts_extremes_toward_mid(trained, fixture_sets):
    _, heldout = fixture_sets
    clean = heldout.images
    out = denoise(trained, clean)
    dark = clean.data < 0.1
    bright = clean.data > 0.9
    assert float(np.mean(out.data[dark] - clean.data[dark])) > 0.0
    assert float(np.mean(out.data[bright] - clean.data[bright])) < 0.0


def test_save_load_roundtrip(tmp_path, trained):
    path = tmp_path / "model.bin"
    save_autoencoder(trained, path)
    loaded = load_autoencoder(path)
    assert loaded.params == trained.params
    assert loaded.trained_noise_level == trained.trained_noise_level


def test_load_rejects_plain_param_set(tmp_path, trained):
    from fedgan.nn import save_param_set

    path = tmp_path / "plain.bin"
    save_param_set(trained.params, path)
    with pytest.raises(ValueError, match="trained_noise_level"):
        load_autoencoder(path)


def test_autoencoder_gradients_match_finite_differences():
    from fedgan import autodiff as ad
    from fedgan.denoiser import autoencoder_graph

    params = init_autoencoder(seed=4)
    # smooth random pixels: flat-black fixture backgrounds put conv
    # pre-activations exactly on the ReLU kink, where finite differences
    # and subgradients legitimately disagree
    rng = np.random.default_rng(8)
    x = rng.uniform(0.05, 0.95, size=(2, 1, 28, 28))
    target = add_pixel_noise(Tensor(x), 0.2, seed=1).data

    def builder(params_set):
        g = ad.Graph()
        p = g.bind(params_set)
        out = autoencoder_graph(g, p, g.constant(x))
        return float(ad.mse_mean(out, g.constant(target)).value)

    g = ad.Graph()
    p = g.bind(params)
    loss = ad.mse_mean(autoencoder_graph(g, p, g.constant(x)), g.constant(target))
    analytic = ad.grad(loss, params)
    coords = sample_coordinates(params, per_tensor=10, seed=2)
    assert fd_gradcheck(builder, params, analytic, coords) < 1e-4


def test_estimator_fit_transform_layouts(fixture_sets):
    _, heldout = fixture_sets
    flat = heldout.images.data[:64].reshape(64, 784)
    est = DenoisingAutoencoder(epochs=2, seed=1)
    est.fit(flat)
    out = est.transform(flat[:5])
    assert out.shape == (5, 784)
    cube = est.transform(heldout.images.data[:5])
    assert cube.shape == (5, 1, 28, 28)
    assert np.allclose(out, cube.reshape(5, 784))


def test_estimator_requires_fit():
    est = DenoisingAutoencoder()
    with pytest.raises(RuntimeError, match="not fitted"):
        est.transform(np.zeros((1, 1, 28, 28)))


def test_estimator_sklearn_params_roundtrip():
    est = DenoisingAutoencoder(noise_level=0.3, epochs=7)
    params = est.get_params()
    assert params["noise_level"] == 0.3
    clone = DenoisingAutoencoder(**params)
    assert clone.get_params() == params


def test_estimator_save_load(tmp_path, fixture_sets):
    _, heldout = fixture_sets
    est = DenoisingAutoencoder(epochs=1, seed=2).fit(heldout.images.data[:32])
    path = tmp_path / "est.bin"
    est.save(path)
    loaded = DenoisingAutoencoder.load(path)
    x = heldout.images.data[:4]
    assert np.array_equal(est.transform(x), loaded.transform(x))
