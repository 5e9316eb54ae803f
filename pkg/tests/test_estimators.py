import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from audioinr import dsp, hypernet, inr, train
from audioinr.errors import ShapeError
from audioinr.estimators import HyperINR, INRRegressor, check_coordinates, check_waveforms
from audioinr.signal import make_grid, random_tones, sine_mixture

TINY_HYPER = hypernet.HypernetworkSpec(
    input_len=640, encoder_channels=(4, 4, 8, 8), head_hidden=(32,),
    target=inr.TargetNetworkSpec(kind="fmlp", embedding_L=6, hidden_widths=(8, 8)))
TINY_TRAIN = train.TrainConfig(batch_size=4, epochs=2, samples_per_epoch=8, max_lr=1e-3,
                               loss=dsp.LossConfig(stft=dsp.StftConfig(fft_sizes=(256, 128),
                                                                       n_mels=16)))


def test_check_waveforms():
    assert check_waveforms(np.zeros(10)).shape == (1, 10)
    assert check_waveforms(np.zeros((3, 10)), length=8).shape == (3, 8)
    with pytest.raises(ShapeError):
        check_waveforms(np.zeros((3, 10)), length=11)
    with pytest.raises(ValueError):
        check_waveforms(np.full((1, 4), 2.0))
    with pytest.raises(ValueError):
        check_waveforms(np.array([[0.0, np.nan]]))


def test_check_coordinates():
    assert check_coordinates(np.zeros((5, 1))).shape == (5,)
    with pytest.raises(ShapeError):
        check_coordinates(np.zeros((5, 2)))


def test_regressor_params_and_clone():
    est = INRRegressor(kind="fmlp", steps=10)
    params = est.get_params()
    assert params["kind"] == "fmlp" and params["steps"] == 10
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=1e-3)
    assert est.lr == 1e-3


def test_regressor_fit_predict():
    clip = sine_mixture([200.0], n_samples=400, sample_rate=8000, amplitudes=[0.7])
    X = make_grid(400).coords[:, None]
    est = INRRegressor(hidden_widths=(24, 24), omega_0=300.0, steps=400, lr=1e-3)
    with pytest.raises(NotFittedError):
        est.predict(X)
    est.fit(X, clip.samples)
    assert est.predict(X).shape == (400,)
    assert est.score(X, clip.samples) > 0.9
    assert est.render(800).shape == (800,)
    assert est.loss_curve_[-1] < est.loss_curve_[0]
    with pytest.raises(ShapeError):
        est.fit(X, clip.samples[:-1])


def test_hyper_transform_and_inverse():
    X = np.stack([c.samples for c in random_tones(4, 640, seed=1)])
    est = HyperINR(hyper_spec=TINY_HYPER, train_config=TINY_TRAIN, seed=3)
    assert clone(est).get_params()["seed"] == 3
    est.fit(X)
    assert len(est.history_) == 2
    theta = est.transform(X)
    assert theta.shape == (4, inr.param_count(TINY_HYPER.target))
    assert est.inverse_transform(theta).shape == (4, 640)
    assert est.inverse_transform(theta, n_samples=1280).shape == (4, 1280)
    np.testing.assert_array_equal(est.predict(X), est.inverse_transform(theta))
    with pytest.raises(ShapeError):
        est.inverse_transform(theta[:, :-1])
    with pytest.raises(ShapeError):
        est.transform(X[:, :100])


def test_hyper_seed_overrides_config():
    X = np.stack([c.samples for c in random_tones(4, 640, seed=1)])
    a = HyperINR(hyper_spec=TINY_HYPER, train_config=TINY_TRAIN, seed=0).fit(X)
    b = HyperINR(hyper_spec=TINY_HYPER, train_config=TINY_TRAIN, seed=0).fit(X)
    c = HyperINR(hyper_spec=TINY_HYPER, train_config=TINY_TRAIN, seed=1).fit(X)
    np.testing.assert_array_equal(a.transform(X), b.transform(X))
    assert not np.array_equal(a.transform(X), c.transform(X))
