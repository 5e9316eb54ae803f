import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audioinr import diffcore as dc
from audioinr import dsp, hypernet, inr, train
from audioinr.errors import ConfigError, ShapeError
from audioinr.signal import make_grid, random_tones

FMLP = inr.TargetNetworkSpec(kind="fmlp", embedding_L=4, hidden_widths=(8, 8))
SIREN = inr.TargetNetworkSpec(kind="siren", hidden_widths=(16, 16, 16))


def _spec(target=FMLP, n=640, channels=(4, 4, 8, 8), head=(32, 32)):
    return hypernet.HypernetworkSpec(input_len=n, encoder_channels=channels, head_hidden=head,
                                     target=target)


def _clips(k, n, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, (k, n))


def test_full_scale_latent_size():
    spec = hypernet.HypernetworkSpec()
    assert spec.latent_frames == 103 and spec.latent_size == 103 * 32 == 3296
    state = hypernet.build_state(hypernet.HypernetworkSpec(head_hidden=(8,)), seed=0)
    assert hypernet.encode(state, _clips(1, 32768)).shape == (1, 3296)


def test_desk_scale_latent_size():
    spec = _spec(n=2048, channels=(8, 16, 32, 32))
    assert spec.latent_size == 7 * 32 == 224
    state = hypernet.build_state(spec)
    assert hypernet.encode(state, _clips(2, 2048)).shape == (2, 224)


@given(st.integers(1, 5000))
def test_latent_frames_ceil_division(n):
    assert _spec(n=n).latent_frames == math.ceil(n / 320)


def test_spec_validation():
    with pytest.raises(ConfigError):
        hypernet.HypernetworkSpec(encoder_strides=(2, 4), encoder_channels=(4,))
    with pytest.raises(ConfigError):
        hypernet.HypernetworkSpec(head_hidden=(0,))


def test_zero_input_zero_latent():
    state = hypernet.build_state(_spec())
    assert np.all(hypernet.encode(state, np.zeros((2, 640))) == 0)


def test_wrong_length_rejected():
    state = hypernet.build_state(_spec())
    with pytest.raises(ShapeError):
        hypernet.encode(state, np.zeros((1, 639)))
    with pytest.raises(ShapeError):
        hypernet.head(state, np.zeros((1, 5)))


@pytest.mark.parametrize("target", [FMLP, SIREN, inr.TargetNetworkSpec(variant="shared",
                                                                          shared_layer_count=2)])
def test_head_output_is_param_count(target):
    state = hypernet.build_state(_spec(target))
    theta = hypernet.generate(state, _clips(3, 640))
    assert theta.shape == (3, inr.param_count(target))
    assert hypernet.generate(state, _clips(1, 640)[0]).shape == (inr.param_count(target),)


def test_distinct_clips_distinct_weights():
    state = hypernet.build_state(_spec())
    theta = hypernet.generate(state, _clips(2, 640))
    assert np.linalg.norm(theta[0] - theta[1]) > 0


def test_batch_equals_individual_and_is_deterministic():
    state = hypernet.build_state(_spec())
    x = _clips(4, 640, seed=3)
    batch = hypernet.generate(state, x)
    np.testing.assert_array_equal(batch, hypernet.generate(state, x))
    for i in range(4):
        np.testing.assert_allclose(hypernet.generate(state, x[i]), batch[i], rtol=1e-5, atol=1e-6)


def test_generate_then_render_is_finite():
    state = hypernet.build_state(_spec())
    theta = hypernet.generate(state, _clips(1, 640)[0])
    out = inr.forward(FMLP, theta, state.shared, make_grid(640))
    assert out.shape == (640,) and np.all(np.isfinite(out))


@pytest.mark.parametrize("target,eps", [
    (FMLP, 1e-3),
    (inr.TargetNetworkSpec(kind="siren", hidden_widths=(8, 8), omega_0=30.0), 1e-5),
    (inr.TargetNetworkSpec(kind="siren", hidden_widths=(3,), omega_0=30.0, variant="residual"), 1e-5),
])
def test_end_to_end_gradients(target, eps):
    # The composite is stiff (log-mel near silent bands, ReLU kinks), so the
    # finite-difference step is 1e-6; truncation error shrinks as step**2.
    spec = _spec(target, n=320, channels=(2, 2, 2, 2), head=(6,))
    state = hypernet.build_state(spec, seed=1, dtype=np.float64)
    x = np.stack([c.samples for c in random_tones(2, 320, seed=2)])
    cfg = dsp.LossConfig(stft=dsp.StftConfig(fft_sizes=(64, 32), n_mels=8), epsilon=eps)

    def fn(params):
        state.params = params
        res = train.hyper_loss_and_grads(state, x, cfg, 0)
        return res.total, {n: params.grad(n) for n in params.names()}

    rep = dc.grad_check(fn, state.params, tol=1e-4, rel_step=1e-6)
    assert rep.passed, rep.errors


def test_nearly_all_parameters_receive_gradient():
    spec = _spec(n=2048, channels=(8, 16, 32, 32), head=(64, 64),
                 target=inr.TargetNetworkSpec(hidden_widths=(16,) * 5))
    state = hypernet.build_state(spec, seed=0)
    hypernet.init_for_fmlp(state, 0)
    x = np.stack([c.samples for c in random_tones(4, 2048, seed=5)]).astype(np.float32)
    train.hyper_loss_and_grads(state, x, dsp.LossConfig(), 0)
    total = sum(v.size for _, v in state.params.items())
    dead = sum(int(np.sum(state.params.grad(k) == 0)) for k in state.params.names())
    for k in state.params.names():
        assert np.any(state.params.grad(k) != 0), k
    assert dead / total < 0.05


def _generated(state, n_probe=256, seed=11):
    rng = np.random.default_rng(seed)
    x = hypernet.probe_clips(n_probe, state.spec.input_len, rng)
    return hypernet.generate(state, x).astype(np.float64)


def test_init_for_fmlp_matches_kaiming_variance():
    target = inr.TargetNetworkSpec(kind="fmlp", hidden_widths=(16,) * 5)
    state = hypernet.build_state(_spec(target, n=2048, channels=(8, 16, 32, 32), head=(64, 64)))
    hypernet.init_for_fmlp(state, rng_seed=0)
    theta = _generated(state)
    lay = inr.layout(target)
    for e in lay.entries:
        chunk = theta[:, e.offset : e.offset + e.size]
        fan_in = target.layer_shapes(e.layer)[0][1]
        if e.role == "W":
            assert abs(chunk.var() / (2.0 / fan_in) - 1) < 0.2, e.key
        else:
            assert abs(chunk.mean()) < 0.05, e.key


def test_init_for_fmlp_seeds_differ():
    a = hypernet.build_state(_spec())
    b = hypernet.build_state(_spec())
    hypernet.init_for_fmlp(a, 0)
    hypernet.init_for_fmlp(b, 1)
    assert not np.array_equal(a.params["head.2.W"], b.params["head.2.W"])


def test_init_for_siren_bounds():
    state = hypernet.build_state(_spec(SIREN))
    hypernet.init_for_siren(state, rng_seed=3)
    last = len(state.spec.head_dims) - 2
    assert np.max(np.abs(state.params[f"head.{last}.W"])) <= hypernet.SIREN_HEAD_BOUND
    bias = state.params[f"head.{last}.b"].astype(np.float64)
    theta = _generated(state, n_probe=64)
    assert np.max(np.abs(theta - bias)) < 1e-2
    w0 = inr.unflatten(theta, inr.layout(SIREN))["L0.W"]
    n = SIREN.dims[0]
    assert np.all(np.abs(w0) <= 1.0 / n + 1e-2)
    encoded = inr.unflatten(bias, inr.layout(SIREN))
    for i in range(1, SIREN.n_layers):
        fan = SIREN.dims[i]
        assert np.max(np.abs(encoded[f"L{i}.W"])) <= math.sqrt(6 / fan) / SIREN.omega_i + 1e-7


def test_overfit_single_clip():
    target = inr.TargetNetworkSpec(kind="fmlp", hidden_widths=(16,) * 3)
    spec = _spec(target, n=2048, channels=(8, 16, 32, 32), head=(64,))
    clip = random_tones(1, 2048, seed=4, n_partials=2, freq_range=(100, 400))
    cfg = train.TrainConfig(batch_size=1, epochs=800, samples_per_epoch=1, max_lr=1e-3,
                            loss=dsp.LossConfig(lambda_f=0.01), seed=0)
    result = train.train_hypernetwork(clip, spec, cfg)
    first = result.history[0]["loss_total"]
    last = result.history[-1]["loss_total"]
    assert last < 0.1 * first
