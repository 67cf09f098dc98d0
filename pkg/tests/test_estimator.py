import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from maskloc import GaussianMaskDetector, synth


def test_params_round_trip():
    est = GaussianMaskDetector(radius_nm=40.0, epochs=3)
    assert est.get_params()["radius_nm"] == 40.0
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert est.set_params(init="random").init == "random"


def test_unfitted_and_bad_input():
    est = GaussianMaskDetector()
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 64, 64)))
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 64, 32)), [0, 1])
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 64, 64)), [0])


def test_fit_predict_score(bench):
    splits = synth.generate_dataset(synth.SceneSpec(), 100, seed=5)
    X = np.stack([s.image for s in splits["train"]])
    y = [s.label for s in splits["train"]]
    est = GaussianMaskDetector(epochs=2).fit(X, y)
    assert hasattr(est, "model_") and hasattr(est, "config_")
    # swap in the benchmark classifier to check the localization path
    est.model_ = bench.model
    test = bench.test[:6]
    Xt = np.stack([s.image for s in test])
    preds = est.predict(Xt)
    assert len(preds) == 6
    score = est.score(Xt, [s.centers for s in test])
    assert 0.0 <= score <= 1.0
    assert est.predict(Xt) == preds
