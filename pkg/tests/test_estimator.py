import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from thermohand.domain import Annotation
from thermohand.estimator import HandPoseEstimator
from thermohand.validation import check_images, split_samples


def test_params_round_trip(tiny_cfg):
    est = HandPoseEstimator(network=tiny_cfg, epochs=3, alpha=0.5)
    params = est.get_params()
    assert params["epochs"] == 3 and params["alpha"] == 0.5 and params["learning_rate"] == 0.001
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(epochs=4)
    assert est.epochs == 4


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        HandPoseEstimator().predict(np.zeros((1, 100, 100)))


@pytest.mark.parametrize("shape", [(2, 100, 100), (2, 100, 100, 1), (2, 1, 100, 100), (100, 100)])
def test_check_images_shapes(shape):
    out = check_images(np.zeros(shape))
    assert out.shape[1:] == (1, 100, 100) and out.dtype == np.float32


@pytest.mark.parametrize("bad", [np.zeros((2, 50, 50)), np.full((1, 100, 100), np.nan),
                                 np.full((1, 100, 100), 2.0), np.zeros((0, 100, 100))])
def test_check_images_rejects(bad):
    with pytest.raises(ValueError):
        check_images(bad)


def test_fit_predict_save_load(tmp_path, small_set, tiny_cfg):
    X, y = split_samples(small_set)
    est = HandPoseEstimator(network=tiny_cfg, epochs=1, batch_size=8, random_state=0)
    assert est.fit(X, [a.to_json() for a in y]) is est
    preds = est.predict(X[:5])
    assert len(preds) == 5 and all(isinstance(p, Annotation) for p in preds)
    proba = est.predict_proba(X[:5])
    assert proba.shape == (5, 10) and np.allclose(proba.sum(1), 1, atol=1e-5)
    score = est.score(X, y)
    assert 0.0 <= score <= 1.0
    est.save(tmp_path / "est.ckpt")
    again = HandPoseEstimator.load(tmp_path / "est.ckpt")
    assert again.get_params()["epochs"] == 1
    assert np.array_equal(again.predict_outputs(X[:3])["heatmaps"], est.predict_outputs(X[:3])["heatmaps"])


def test_fit_rejects_label_count(small_set, tiny_cfg):
    X, y = split_samples(small_set)
    with pytest.raises(ValueError):
        HandPoseEstimator(network=tiny_cfg, epochs=1).fit(X, y[:-1])
