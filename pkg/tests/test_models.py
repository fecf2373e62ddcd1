import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvdeepid.backbone import INPUT_SHAPE, LAYER_SHAPES
from mvdeepid.models import (
    AggregationSpec,
    M2Model,
    MvModel,
    aggregate_multilevel,
    aggregate_views,
    baseline_forward,
    check_model_gradients,
    copy_model,
    forward,
    init_from_baseline,
    init_model,
    is_conv_param,
    loss,
    m2_forward,
    model_backward,
    mv_forward,
    reduced_model,
    sgd_step,
)
from mvdeepid.tensor import ShapeError

from oracles import straight_forward


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5), h=st.integers(1, 8), w=st.integers(1, 8), d=st.integers(1, 8))
def test_aggregation_dimension_property(n, h, w, d):
    feats = [np.full((h, w, d), float(i)) for i in range(n)]
    agg = aggregate_views(feats)
    assert agg.shape == (n * h, w, d)
    assert agg.size == AggregationSpec(n, h, w, d).d == (n * h) * w * d
    # view i occupies rows i*h .. (i+1)*h
    assert all(np.all(agg[i * h:(i + 1) * h] == i) for i in range(n))


@pytest.mark.parametrize("n,d", [(1, 960), (3, 2880), (5, 4800)])
def test_aggregation_concrete_dims(n, d):
    assert aggregate_views([np.zeros(LAYER_SHAPES[3])] * n).size == d
    assert MvModel.dim_for(n) == d


def test_multilevel_dim():
    assert M2Model.dim_for(3) == 6480
    per_view = [(np.zeros(LAYER_SHAPES[2]), np.zeros(LAYER_SHAPES[3]))] * 3
    assert aggregate_multilevel(per_view).shape == (6480,)


def test_aggregation_rejects_mismatch():
    with pytest.raises(ShapeError):
        aggregate_views([np.zeros((4, 3, 80)), np.zeros((4, 3, 60))])
    with pytest.raises(ValueError):
        aggregate_views([])
    with pytest.raises(ValueError):
        AggregationSpec(0, 4, 3, 80)


def _random_sample(rng, views):
    return {v: rng.random(INPUT_SHAPE) for v in views}


@pytest.fixture(scope="module")
def full_models():
    out = {}
    for kind in ("baseline", "mv", "m2"):
        m = init_model(kind, ("L", "C", "R"), num_classes=7, seed=[11, len(kind)])
        rng = np.random.default_rng(len(kind))
        for name, arr in m.named_params().items():
            if name.endswith(".b"):
                arr[...] = rng.uniform(-0.05, 0.05, size=arr.shape)
        out[kind] = m
    return out


def test_forward_oracle(full_models):
    rng = np.random.default_rng(2024)
    for i in range(20):
        sample = _random_sample(rng, ("L", "C", "R"))
        mv = full_models["mv"]
        np.testing.assert_allclose(mv_forward(sample, mv)[0], straight_forward(mv, sample, False), rtol=0, atol=1e-12)
        m2 = full_models["m2"]
        np.testing.assert_allclose(m2_forward(sample, m2)[0], straight_forward(m2, sample, True), rtol=0, atol=1e-12)
        base = full_models["baseline"]
        np.testing.assert_allclose(baseline_forward(sample["C"], base),
                                   straight_forward(base, {"C": sample["C"]}, False), rtol=0, atol=1e-12)


def test_forward_outputs_distribution(full_models):
    sample = _random_sample(np.random.default_rng(0), ("L", "C", "R"))
    probs, _ = forward(full_models["m2"], sample)
    assert probs.shape == (7,)
    assert abs(probs.sum() - 1) < 1e-12 and np.all(probs > 0)


def test_sample_dict_order_and_extras_do_not_matter(full_models):
    rng = np.random.default_rng(5)
    sample = _random_sample(rng, ("L", "C", "R"))
    shuffled = {k: sample[k] for k in ("R", "L", "C")}
    shuffled["U"] = rng.random(INPUT_SHAPE)
    a = forward(full_models["mv"], sample)[0]
    b = forward(full_models["mv"], shuffled)[0]
    assert np.array_equal(a, b)


def test_swapping_views_changes_output(full_models):
    sample = _random_sample(np.random.default_rng(6), ("L", "C", "R"))
    swapped = {"L": sample["R"], "C": sample["C"], "R": sample["L"]}
    assert not np.allclose(forward(full_models["mv"], sample)[0], forward(full_models["mv"], swapped)[0])


def test_missing_view_named(full_models):
    sample = _random_sample(np.random.default_rng(0), ("L", "C"))
    with pytest.raises(KeyError, match="'R'"):
        forward(full_models["mv"], sample)


def test_forward_type_guards(full_models):
    sample = _random_sample(np.random.default_rng(0), ("L", "C", "R"))
    with pytest.raises(TypeError):
        mv_forward(sample, full_models["m2"])
    with pytest.raises(TypeError):
        m2_forward(sample, full_models["mv"])
    with pytest.raises(ValueError):
        baseline_forward(sample["C"], full_models["mv"])


def test_baseline_always_center():
    assert init_model("baseline", ("L", "C", "R"), 3, 0).view_order == ("C",)


def test_stale_cache_rejected():
    m = reduced_model("mv", 0)
    sample = _random_sample(np.random.default_rng(0), m.view_order)
    _, cache = forward(m, sample)
    grads = model_backward(m, cache, 1)
    sgd_step(m, grads, 0.1)
    with pytest.raises(ValueError, match="stale"):
        model_backward(m, cache, 1)


def test_sgd_moves_against_gradient():
    m = reduced_model("m2", 1)
    sample = _random_sample(np.random.default_rng(1), m.view_order)
    before = loss(m, sample, 2)
    _, cache = forward(m, sample)
    sgd_step(m, model_backward(m, cache, 2), 1e-2)
    assert loss(m, sample, 2) < before


def test_freeze_conv_keeps_backbone():
    m = reduced_model("mv", 2)
    m.freeze_conv = True
    before = copy_model(m).named_params()
    sample = _random_sample(np.random.default_rng(2), m.view_order)
    _, cache = forward(m, sample)
    sgd_step(m, model_backward(m, cache, 0), 0.5)
    for name, arr in m.named_params().items():
        if is_conv_param(name):
            assert np.array_equal(arr, before[name]), name
    assert not np.array_equal(m.fc_w, before["fc.w"])


def test_init_from_baseline_copies_conv_only():
    base = reduced_model("baseline", 3)
    target = reduced_model("m2", 4)
    head = target.fc_w.copy()
    init_from_baseline(base, target, freeze_conv=True)
    assert target.freeze_conv
    for sub in target.subnets:
        for a, b in zip(sub.weights, base.subnets[0].weights):
            assert np.array_equal(a, b) and a is not b
    assert target.subnets[0].weights[0] is not target.subnets[1].weights[0]
    assert np.array_equal(target.fc_w, head)


def test_batch_gradient_is_mean_of_singles():
    m = reduced_model("mv", 5)
    rng = np.random.default_rng(5)
    batch = {v: rng.random((3,) + INPUT_SHAPE) for v in m.view_order}
    labels = np.array([0, 2, 1])
    _, cache = forward(m, batch)
    g = model_backward(m, cache, labels)
    singles = []
    for i in range(3):
        _, c = forward(m, {v: batch[v][i] for v in m.view_order})
        singles.append(model_backward(m, c, labels[i]))
    for name in g:
        np.testing.assert_allclose(g[name], np.mean([s[name] for s in singles], axis=0), atol=1e-12)


@pytest.mark.parametrize("kind", ["baseline", "mv", "m2"])
def test_gradients_match_finite_differences(kind):
    res = check_model_gradients(kind, seed=100, sample=20)
    assert res.error < 1e-4
    assert res.checked > 0 and res.skipped < res.checked // 4


def test_gradient_check_detects_sign_error():
    res = check_model_gradients("mv", seed=0, corrupt="L.conv1.w", sample=10)
    assert res.error == pytest.approx(2.0, abs=1e-3)
    assert res.worst == "L.conv1.w"


def test_kink_crossings_are_what_the_filter_removes():
    # seed 100 with this sampling puts one probe pair across a ReLU/pool switch
    plain = check_model_gradients("mv", seed=100, sample=20, kink_aware=False)
    aware = check_model_gradients("mv", seed=100, sample=20)
    assert plain.error > 1e-2
    assert aware.skipped >= 1 and aware.unfiltered == pytest.approx(plain.error)
    assert aware.error < 1e-4
    # shrinking the step moves the probes back inside one linear piece
    assert check_model_gradients("mv", seed=100, eps=1e-6, sample=20, kink_aware=False).error < 1e-4


def test_copy_model_is_deep():
    m = reduced_model("m2", 0)
    c = copy_model(m)
    c.fc_w[...] = 0
    assert m.fc_w.any()
    assert isinstance(c, M2Model)
