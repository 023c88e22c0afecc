import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bldgseg.netgraph import (
    NetworkSpec,
    ParamSet,
    SpecParseError,
    StageSpec,
    backward,
    forward,
    init_params,
    load_checkpoint,
    full_network,
    receptive_field,
    reduced_network,
    save_checkpoint,
)
from bldgseg.tensor import ShapeError
from oracles import numeric_grad, rel_error, rf_by_connectivity

TOY = NetworkSpec((StageSpec(4, 3, 2, True), StageSpec(4, 3, 1, True)), fusion_classes=8)


def toy_case(seed=0, spec=TOY, size=16):
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    # non-zero biases keep more ReLUs active so every path carries gradient
    for k, v in params.arrays.items():
        if k.endswith(".b"):
            v[:] = rng.uniform(0.05, 0.2, size=v.shape)
    image = rng.uniform(0, 1, size=(size, size, 3))
    h = size // 2
    labels = rng.integers(0, spec.fusion_classes, size=(h, h))
    return params, image, labels


def loss_of(spec, params, image, labels):
    _, cache = forward(spec, params, image, keep_intermediates=True)
    return backward(spec, params, cache, labels)[0]


def test_full_network():
    spec = full_network()
    assert len(spec.stages) == 7
    assert spec.fusion_input_channels == 290
    assert receptive_field(spec) == 148
    assert [(s.filter_count, s.filter_size, s.pool, s.tapped) for s in spec.stages] == [
        (50, 5, 2, True), (70, 5, 2, True), (100, 3, 2, True), (150, 3, 2, False),
        (100, 3, 1, False), (70, 3, 1, False), (70, 3, 1, True)]
    assert spec.fusion_classes == 128


def test_receptive_field_small_cases():
    assert receptive_field(NetworkSpec((StageSpec(1, 3, 1, True),))) == 3
    fig7 = NetworkSpec((StageSpec(1, 3, 2), StageSpec(1, 3, 1, True)))
    assert receptive_field(fig7) == 8
    assert rf_by_connectivity([(3, 2), (3, 1)]) == 8


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_receptive_field_matches_connectivity(m):
    for combo in itertools.product([(3, 1), (3, 2), (5, 1), (5, 2)], repeat=m):
        spec = NetworkSpec(tuple(StageSpec(1, s, p, i == m - 1) for i, (s, p) in enumerate(combo)))
        assert receptive_field(spec) == rf_by_connectivity(list(combo)), combo


def test_spec_validation():
    with pytest.raises(ValueError):
        StageSpec(4, 4, 1)
    with pytest.raises(ValueError):
        StageSpec(4, 3, 3)
    with pytest.raises(ValueError):
        NetworkSpec((StageSpec(4, 3, 2, True), StageSpec(4, 3, 1, False)))


def test_spec_text_round_trip():
    for spec in (full_network(), reduced_network(), TOY):
        assert NetworkSpec.from_text(spec.to_text()) == spec


def test_spec_parse_error_names_line():
    with pytest.raises(SpecParseError) as e:
        NetworkSpec.from_text("conv 4 3 2 tap\n\nconv 4 x 1 tap\n")
    assert e.value.lineno == 3
    with pytest.raises(SpecParseError) as e:
        NetworkSpec.from_text("conv 4 3 2 tap\nbogus\n")
    assert e.value.lineno == 2


def test_forward_minimal_shape():
    spec = reduced_network()
    probs, _ = forward(spec, init_params(spec, 0), np.random.default_rng(0).uniform(size=(16, 16, 3)))
    assert probs.shape == (8, 8, 128)
    assert np.abs(probs.sum(-1) - 1).max() < 1e-12


@pytest.mark.slow
def test_forward_full_network_512():
    spec = full_network()
    params = init_params(spec, 0, np.float32)
    image = np.random.default_rng(0).uniform(size=(512, 512, 3)).astype(np.float32)
    probs, cache = forward(spec, params, image, keep_intermediates=True)
    assert probs.shape == (256, 256, 128)
    assert np.abs(probs.sum(-1, dtype=np.float64) - 1).max() < 1e-6
    assert cache.stack.shape == (256, 256, 290)
    assert cache.factors == [1, 2, 4, 8]


@settings(max_examples=8, deadline=None)
@given(h=st.integers(1, 5), w=st.integers(1, 5))
def test_forward_any_multiple_of_16(h, w):
    spec = NetworkSpec((StageSpec(2, 3, 2, True), StageSpec(2, 3, 2), StageSpec(2, 3, 2, True)), 8)
    probs, _ = forward(spec, init_params(spec, 1), np.zeros((16 * h, 16 * w, 3)))
    assert probs.shape == (8 * h, 8 * w, 8)


def test_forward_rejects_indivisible():
    spec = reduced_network()
    with pytest.raises(ShapeError, match="multiples of 16"):
        forward(spec, init_params(spec, 0), np.zeros((24, 32, 3)))
    with pytest.raises(ShapeError):
        forward(spec, init_params(spec, 0), np.zeros((32, 32, 4)))


def test_backward_finite_differences():
    params, image, labels = toy_case(0)
    _, cache = forward(TOY, params, image, keep_intermediates=True)
    _, grads = backward(TOY, params, cache, labels)
    for name, arr in params.arrays.items():
        num = numeric_grad(lambda: loss_of(TOY, params, image, labels), arr)
        assert rel_error(grads[name], num) < 1e-5, name


def test_backward_needs_cache():
    params, image, labels = toy_case(0)
    with pytest.raises(ValueError):
        backward(TOY, params, None, labels)


def test_zero_fusion_weights_zero_stage_gradients():
    params, image, labels = toy_case(1)
    params.arrays["fusion.w"][:] = 0
    _, cache = forward(TOY, params, image, keep_intermediates=True)
    _, grads = backward(TOY, params, cache, labels)
    for name, g in grads.items():
        if name.startswith("stage"):
            assert not g.any(), name
    assert grads["fusion.b"].any()


@pytest.mark.parametrize("spec", [
    TOY,
    NetworkSpec((StageSpec(3, 3, 2, True), StageSpec(4, 3, 2, True), StageSpec(3, 3, 1, True)), 8),
])
def test_branch_gradients_add(spec):
    params, image, labels = toy_case(2, spec)
    _, cache = forward(spec, params, image, keep_intermediates=True)
    _, full = backward(spec, params, cache, labels)
    for i in spec.tapped_indices[:-1]:
        _, chain_only = backward(spec, params, cache, labels, drop_tap={i})
        _, tap_only = backward(spec, params, cache, labels, drop_chain={i})
        _, neither = backward(spec, params, cache, labels, drop_tap={i}, drop_chain={i})
        for j in range(i + 1):
            for suffix in (".w", ".b"):
                name = f"stage{j + 1}{suffix}"
                # the two paths meeting at stage i add; for j < i the earlier
                # taps are present in every run and cancel via `neither`
                total = chain_only[name] + tap_only[name] - neither[name]
                assert np.abs(full[name] - total).max() <= 1e-10 * max(1.0, np.abs(full[name]).max())
        assert not neither[f"stage{i + 1}.w"].any()
        # the tap path contributes something, so dropping it changes the gradient
        assert np.abs(tap_only["stage1.w"]).max() > 0


def test_removing_stage1_tap_changes_gradient_by_tap_path():
    params, image, labels = toy_case(3)
    _, cache = forward(TOY, params, image, keep_intermediates=True)
    _, full = backward(TOY, params, cache, labels)
    _, no_tap = backward(TOY, params, cache, labels, drop_tap={0})
    _, tap_path = backward(TOY, params, cache, labels, drop_chain={0})
    diff = full["stage1.w"] - no_tap["stage1.w"]
    np.testing.assert_allclose(diff, tap_path["stage1.w"], rtol=0, atol=1e-10)


def test_init_params():
    spec = reduced_network()
    a, b = init_params(spec, 7), init_params(spec, 7)
    for k in a.arrays:
        assert a.arrays[k].tobytes() == b.arrays[k].tobytes()
        assert not a.velocity[k].any()
        if k.endswith(".b"):
            assert not a.arrays[k].any()
    w = a.arrays["stage2.w"]
    count, kh, kw, cin = w.shape
    bound = np.sqrt(6 / (kh * kw * cin + kh * kw * count))
    assert np.abs(w).max() <= bound


def test_init_mean_statistics():
    spec = NetworkSpec((StageSpec(16, 5, 1), StageSpec(25, 5, 1, True)), 8)  # 25*5*5*16 = 10^4
    w = init_params(spec, 123).arrays["stage2.w"].ravel()
    assert w.size == 10_000
    a = np.sqrt(6 / (25 * 16 + 25 * 25))
    se = a / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * se
    assert np.var(w) == pytest.approx(a * a / 3, rel=0.05)


def test_paramset_rejects_mismatched_momentum():
    with pytest.raises(ShapeError):
        ParamSet({"x.w": np.zeros((2, 1, 1, 1))}, {"x.w": np.zeros(3)})


def test_checkpoint_round_trip(tmp_path):
    spec = reduced_network()
    params = init_params(spec, 4, np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, spec, params)
    spec2, params2 = load_checkpoint(path)
    assert spec2 == spec
    for k, v in params.arrays.items():
        assert params2.arrays[k].dtype == np.float32
        assert params2.arrays[k].tobytes() == v.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", spec2, params2)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(p)
    spec = TOY
    save_checkpoint(tmp_path / "ok.ckpt", spec, init_params(spec, 0))
    (tmp_path / "cut.ckpt").write_bytes((tmp_path / "ok.ckpt").read_bytes()[:-10])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "cut.ckpt")
