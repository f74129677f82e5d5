import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from segstitch.errors import ParameterError
from segstitch.estimator import ConsensusSegmenter, check_scene_samples


def toy_scene(seed=0, dims=(40, 40), n_samples=3):
    rng = np.random.default_rng(seed)
    pi = np.zeros((3,) + dims)
    pi[1, 6:14, 6:14] = 0.95
    pi[2, 24:32, 22:30] = 0.95
    pi[0] = 1 - pi[1] - pi[2]
    samples = []
    for _ in range(n_samples):
        s = pi.copy()
        s[1] *= rng.uniform(0.9, 1.0)
        s[0] = 1 - s[1:].sum(axis=0)
        samples.append(s)
    return samples


def make_estimator(**kw):
    defaults = dict(window_px=20, stride_px=10, gamma=0.01, d_c=3, w_min=0.3,
                    min_community_px=4, seed=0)
    defaults.update(kw)
    return ConsensusSegmenter(**defaults)


class TestEstimatorApi:
    def test_get_set_params_round_trip(self):
        est = make_estimator()
        params = est.get_params()
        assert params["gamma"] == 0.01
        est.set_params(gamma=0.5)
        assert est.gamma == 0.5

    def test_clone_compatible(self):
        est = make_estimator(gamma=0.07)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_predict_requires_fit(self):
        with pytest.raises(NotFittedError):
            make_estimator().predict([toy_scene()])

    def test_fit_predict_labels(self):
        est = make_estimator()
        X = [toy_scene(0), toy_scene(1)]
        maps = est.fit(X).predict(X)
        assert len(maps) == 2
        for m in maps:
            assert m.shape == (40, 40)
            assert set(np.unique(m)) == {0, 1, 2}

    def test_auto_gamma_selected_from_grid(self):
        est = make_estimator(gamma="auto", gamma_grid=(0.005, 0.01, 0.05))
        est.fit([toy_scene()])
        assert est.gamma_ in (0.005, 0.01, 0.05)
        maps = est.predict([toy_scene()])
        assert maps[0].max() == 2

    def test_prediction_deterministic(self):
        X = [toy_scene()]
        a = make_estimator().fit(X).predict(X)[0]
        b = make_estimator().fit(X).predict(X)[0]
        assert np.array_equal(a, b)

    def test_background_only_scene(self):
        est = make_estimator().fit([toy_scene()])
        empty = [np.ones((1, 40, 40))]
        maps = est.predict([empty])
        assert (maps[0] == 0).all()


class TestInputValidation:
    def test_rejects_empty(self):
        with pytest.raises(ParameterError):
            check_scene_samples([])
        with pytest.raises(ParameterError):
            check_scene_samples([[]])

    def test_rejects_invalid_stack(self):
        bad = np.full((2, 4, 4), 0.9)  # columns sum to 1.8
        with pytest.raises(ParameterError):
            check_scene_samples([[bad]])

    def test_rejects_mixed_canvas(self):
        scene = [np.ones((1, 4, 4)), np.ones((1, 5, 5))]
        with pytest.raises(Exception):
            check_scene_samples([scene])
