import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audioinr import diffcore as dc
from audioinr import inr, train
from audioinr.errors import ConfigError, ShapeError
from audioinr.signal import make_grid, sine_mixture

from oracles import naive_dft

KINDS = ["fmlp", "siren"]
VARIANTS = ["standard", "residual", "modulated", "shared"]


def _spec(kind="fmlp", variant="standard", shared=0, widths=(6, 5, 4), L=3, **kw):
    return inr.TargetNetworkSpec(kind=kind, embedding_L=L, hidden_widths=widths, variant=variant,
                                 shared_layer_count=shared, **kw)


def _random_shared(spec, rng):
    out = {}
    for name in inr.shared_names(spec):
        i = int(name.split(".")[1][1:])
        w_shape, b_shape = spec.layer_shapes(i)
        out[name] = rng.standard_normal(w_shape if name.endswith("W") else b_shape) * 0.3
    return out


def test_positional_encoding_examples():
    np.testing.assert_allclose(inr.positional_encoding(np.array([0.0]), 3)[0], [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(inr.positional_encoding(np.array([1.0]), 1)[0], [0, -1], atol=1e-15)
    np.testing.assert_allclose(inr.positional_encoding(np.array([0.5]), 2)[0], [1, 0, 0, -1],
                               atol=1e-15)


def test_param_count_closed_form():
    spec = inr.TargetNetworkSpec(kind="fmlp", embedding_L=10, hidden_widths=(4,) * 5)
    assert inr.param_count(spec) == (20 * 4 + 4) + 4 * (4 * 4 + 4) + (4 * 1 + 1) == 169


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.sampled_from(VARIANTS),
       st.lists(st.integers(1, 40), min_size=1, max_size=6), st.integers(1, 12), st.data())
def test_param_count_matches_enumeration(kind, variant, widths, L, data):
    n_layers = len(widths) + 1
    shared = data.draw(st.integers(0, n_layers - 1)) if variant == "shared" else 0
    spec = _spec(kind, variant, shared, tuple(widths), L)
    dims = [spec.in_width] + widths + [1]
    brute = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(n_layers) if i >= shared)
    assert inr.param_count(spec) == brute
    lay = inr.layout(spec)
    # offsets partition the flat vector exactly
    pos = 0
    for e in lay.entries:
        assert e.offset == pos
        pos += e.size
    assert pos == lay.size == brute


def test_shared_first_layer_reduces_count():
    std = _spec(widths=(8,) * 5, L=10)
    sh = _spec(variant="shared", shared=1, widths=(8,) * 5, L=10)
    assert inr.param_count(std) - inr.param_count(sh) == 20 * 8 + 8


def test_spec_validation():
    with pytest.raises(ConfigError):
        inr.TargetNetworkSpec(kind="mlp")
    with pytest.raises(ConfigError):
        inr.TargetNetworkSpec(variant="shared", shared_layer_count=6)
    with pytest.raises(ConfigError):
        inr.TargetNetworkSpec(hidden_widths=(4, 0))


@pytest.mark.parametrize("kind", KINDS)
def test_flatten_round_trip(kind):
    spec = _spec(kind)
    theta = inr.init_weights(spec, seed=1, dtype=np.float64)
    lay = inr.layout(spec)
    assert theta.shape == (inr.param_count(spec),)
    np.testing.assert_array_equal(inr.flatten_weights(inr.unflatten(theta, lay), lay), theta)
    with pytest.raises(ShapeError):
        inr.unflatten(theta[:-1], lay)


def test_layout_json_round_trip():
    lay = inr.layout(_spec(variant="shared", shared=2))
    assert inr.Layout.from_json(lay.to_json()) == lay


@pytest.mark.parametrize("kind", KINDS)
def test_residual_zero_hyper_equals_shared_network(kind):
    rng = np.random.default_rng(0)
    spec = _spec(kind, "residual")
    shared = _random_shared(spec, rng)
    zero = np.zeros(inr.param_count(spec))
    plain = inr.flatten_weights({k[len("shared."):]: v for k, v in shared.items()},
                                inr.layout(_spec(kind)))
    a = inr.forward(spec, zero, shared, 64)
    b = inr.forward(_spec(kind), plain, None, 64)
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_modulated_ones_equals_standard(kind):
    rng = np.random.default_rng(1)
    spec = _spec(kind, "modulated")
    shared = {k: np.ones_like(v) for k, v in _random_shared(spec, rng).items()}
    theta = rng.standard_normal(inr.param_count(spec)) * 0.3
    a = inr.forward(spec, theta, shared, 64)
    b = inr.forward(_spec(kind), theta, None, 64)
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_shared_zero_count_equals_standard(kind):
    theta = np.random.default_rng(2).standard_normal(inr.param_count(_spec(kind))) * 0.3
    a = inr.forward(_spec(kind, "shared", 0), theta, None, 64)
    b = inr.forward(_spec(kind), theta, None, 64)
    assert np.max(np.abs(a - b)) < 1e-12


def test_shared_prefix_uses_shared_weights():
    rng = np.random.default_rng(3)
    spec = _spec("fmlp", "shared", 2)
    shared = _random_shared(spec, rng)
    theta = rng.standard_normal(inr.param_count(spec))
    full = dict(inr.unflatten(theta, inr.layout(spec)))
    full.update({k[len("shared."):]: v for k, v in shared.items()})
    plain = inr.flatten_weights(full, inr.layout(_spec("fmlp")))
    np.testing.assert_allclose(inr.forward(spec, theta, shared, 50),
                               inr.forward(_spec("fmlp"), plain, None, 50), atol=1e-12)


def test_missing_shared_weights_raise():
    spec = _spec("fmlp", "residual")
    with pytest.raises(ShapeError):
        inr.forward(spec, np.zeros(inr.param_count(spec)), None, 16)


def test_fmlp_equals_fixed_sine_layer():
    L = 1
    spec = _spec("fmlp", L=L, widths=(5, 4))
    theta = inr.init_weights(spec, seed=4, dtype=np.float64)
    t = make_grid(101).coords
    W0, b0 = inr.encoding_as_sine_layer(L)
    h = dc.sin_scaled(dc.dense(t[:, None], W0, b0), 1.0)
    w = inr.unflatten(theta, inr.layout(spec))
    for i in range(spec.n_layers):
        h = dc.dense(h, w[f"L{i}.W"], w[f"L{i}.b"])
        if i < spec.n_layers - 1:
            h = dc.relu(h)
    assert np.max(np.abs(h[:, 0] - inr.forward(spec, theta, None, make_grid(101)))) < 1e-12


def test_siren_first_layer_formula():
    spec = _spec("siren", widths=(3,), omega_0=7.0)
    theta = np.random.default_rng(5).standard_normal(inr.param_count(spec))
    w = inr.unflatten(theta, inr.layout(spec))
    t = make_grid(9).coords[:, None]
    h = np.sin(7.0 * (t @ w["L0.W"].T + w["L0.b"]))
    expect = (h @ w["L1.W"].T + w["L1.b"])[:, 0]
    np.testing.assert_allclose(inr.forward(spec, theta, None, 9), expect, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_batched_forward_matches_single(kind):
    spec = _spec(kind)
    thetas = np.stack([inr.init_weights(spec, seed=s, dtype=np.float64) for s in range(3)])
    batched = inr.forward(spec, thetas, None, 40)
    for i in range(3):
        np.testing.assert_allclose(batched[i], inr.forward(spec, thetas[i], None, 40), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("variant,shared", [("standard", 0), ("residual", 0), ("modulated", 0),
                                            ("shared", 1)])
def test_forward_gradients(kind, variant, shared):
    kw = {"omega_0": 3.0, "omega_i": 2.0} if kind == "siren" else {}
    spec = _spec(kind, variant, shared, widths=(4, 3), L=2, **kw)
    rng = np.random.default_rng(6)
    store = dc.ParamStore({"theta": rng.standard_normal(inr.param_count(spec)) * 0.5})
    for k, v in _random_shared(spec, rng).items():
        store.add(k, v + (1.0 if variant == "modulated" else 0.0))
    g_out = rng.standard_normal(12)

    def fn(p):
        shared_w = {k: p[k] for k in p.names() if k != "theta"}
        out, cache = inr.forward(spec, p["theta"], shared_w, 12, return_cache=True)
        g_theta, g_shared = inr.backward(spec, cache, g_out)
        return float(np.dot(out, g_out)), {"theta": g_theta, **g_shared}

    for dtype, tol in [(None, 1e-6), (np.float32, 1e-4)]:
        rep = dc.grad_check(fn, store, tol=tol, analytic_dtype=dtype)
        assert rep.passed, (dtype, rep.errors)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_is_continuous(kind):
    spec = _spec(kind)
    theta = inr.init_weights(spec, seed=7, dtype=np.float64)
    t = np.linspace(-0.9, 0.9, 50)
    diffs = [np.max(np.abs(inr.forward(spec, theta, None, t + d) - inr.forward(spec, theta, None, t)))
             for d in (1e-3, 1e-5, 1e-7)]
    assert diffs[0] >= diffs[1] >= diffs[2] and diffs[2] < 1e-3


def test_render_shapes_and_same_grid():
    spec = _spec()
    theta = inr.init_weights(spec, seed=8)
    np.testing.assert_array_equal(inr.render(spec, theta, None, 100),
                                  inr.forward(spec, theta, None, make_grid(100)))
    assert inr.render(spec, theta, None, 200).shape == (200,)
    with pytest.raises(ValueError):
        inr.render(spec, theta, None, 1)


def test_render_superresolution_keeps_pitch():
    sr, f0 = 4000, 200.0
    clip = sine_mixture([f0], n_samples=400, sample_rate=sr, amplitudes=[0.8])
    spec = inr.TargetNetworkSpec(kind="siren", hidden_widths=(24, 24, 24), omega_0=300.0)
    res = train.fit_individual_inr(clip, spec, train.FitConfig(steps=400, lr=1e-3))
    y = inr.render(spec, res.theta, res.shared, 800)
    assert y.shape == (800,)
    spectrum = np.abs(naive_dft(y - y.mean()))
    peak_hz = np.argmax(spectrum) * (2 * sr) / 800
    assert abs(peak_hz - f0) <= (2 * sr) / 800


@pytest.mark.parametrize("kind", KINDS)
def test_init_distributions(kind):
    spec = inr.TargetNetworkSpec(kind=kind, embedding_L=4, hidden_widths=(64,) * 3)
    w = inr.unflatten(inr.init_weights(spec, seed=0, dtype=np.float64), inr.layout(spec))
    for i in range(spec.n_layers):
        n = spec.dims[i]
        if kind == "fmlp":
            bound = math.sqrt(6 / n)
        else:
            bound = 1 / n if i == 0 else math.sqrt(6 / n) / spec.omega_i
        assert np.max(np.abs(w[f"L{i}.W"])) <= bound
        assert np.max(np.abs(w[f"L{i}.b"])) <= 1 / math.sqrt(n)


@pytest.mark.parametrize("ratio", [10, 4, 2, 1, 0.5, 0.125])
def test_width_search_hits_ratio(ratio):
    w = inr.hidden_width_for_ratio(32768, ratio)
    spec = inr.TargetNetworkSpec(hidden_widths=(w,) * 5)
    assert abs(inr.compression_ratio(spec, 32768) / ratio - 1) < 0.05


def test_export_weights_csv(tmp_path):
    spec = _spec()
    rows = np.stack([inr.init_weights(spec, seed=s, dtype=np.float64) for s in range(3)])
    path = tmp_path / "w.csv"
    inr.export_weights_csv(path, rows, spec, ["a", "b", "c"])
    back = inr.read_weights_csv(path)
    assert back.shape == (3, inr.param_count(spec))
    np.testing.assert_array_equal(back, rows)
    first = path.read_text().splitlines()[0]
    assert first.startswith("# layout: L0.W")
    with pytest.raises(ShapeError):
        inr.export_weights_csv(path, rows[:, :-1], spec)
