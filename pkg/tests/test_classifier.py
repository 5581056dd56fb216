import numpy as np
import pytest

from fedgan.classifier import ConvNetClassifier
from fedgan.data import fixture_paths, load_labeled_set


@pytest.fixture(scope="module")
def heldout():
    paths = fixture_paths()
    return load_labeled_set(paths["heldout_images"], paths["heldout_labels"])


@pytest.fixture(scope="module")
def fitted(heldout):
    clf = ConvNetClassifier(epochs=6, seed=1)
    return clf.fit(heldout.images.data, heldout.labels)


def test_fit_learns_the_fixture(fitted):
    assert fitted.train_accuracy_ > 0.8


def test_fit_is_deterministic(heldout):
    a = ConvNetClassifier(epochs=2, seed=7).fit(heldout.images.data[:64], heldout.labels[:64])
    b = ConvNetClassifier(epochs=2, seed=7).fit(heldout.images.data[:64], heldout.labels[:64])
    assert a.params_ == b.params_


def test_features_shape_and_freeze(fitted, heldout):
    probe = heldout.images.data[:16]
    f1 = fitted.features(probe)
    f2 = fitted.features(probe)
    assert f1.shape == (16, 64)
    assert f1.tobytes() == f2.tobytes()


def test_predict_matches_logit_argmax(fitted, heldout):
    probe = heldout.images.data[:16]
    assert np.array_equal(
        fitted.predict(probe), np.argmax(fitted.predict_logits(probe), axis=1)
    )


def test_score_via_mixin(fitted, heldout):
    score = fitted.score(heldout.images.data[:64], heldout.labels[:64])
    assert 0.0 <= score <= 1.0


def test_requires_fit():
    clf = ConvNetClassifier()
    with pytest.raises(RuntimeError, match="not fitted"):
        clf.predict(np.zeros((1, 1, 28, 28)))


def test_input_validation(heldout):
    clf = ConvNetClassifier(epochs=1)
    with pytest.raises(ValueError, match="class id"):
        clf.fit(heldout.images.data[:10], np.full(10, 17))
    with pytest.raises(ValueError, match="shape"):
        clf.fit(heldout.images.data[:10], heldout.labels[:9])
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        clf.fit(heldout.images.data[:10] * 3.0, heldout.labels[:10])


def test_get_params_roundtrip():
    clf = ConvNetClassifier(feature_dim=32, epochs=3)
    params = clf.get_params()
    assert ConvNetClassifier(**params).get_params() == params
