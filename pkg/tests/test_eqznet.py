import json

import numpy as np
import pytest

from eqzsim.eqznet import (
    EqzNetBank,
    EqzNetParams,
    LabeledDataset,
    TrainConfig,
    build_dataset,
    compose_head,
    compose_sum,
    forward,
    gradient,
    init_k_eqznet,
    init_random,
    lmmse_operation_count,
    load_checkpoint,
    loss,
    loss_and_gradient,
    operation_count,
    per_bit_equalizer_bank,
    save_checkpoint,
    train,
    train_recipe,
)
from eqzsim.lmmse import design_filter, estimate_symbol, shifted_filter
from eqzsim.txchain import ChannelModel, ObservationFrame, PamConstellation, apply_channel, frame_matrix, gray_map, random_bits

FILT = design_filter(ChannelModel.preset("h_A", 0.05), 7, 7)


def random_params(architecture, rng, n1=2, n2=1, K=4, L=2, scale=0.5):
    def block(prefix, width):
        return {
            f"{prefix}.W1": scale * rng.standard_normal((width, n1 + n2 + 1)),
            f"{prefix}.b1": scale * rng.standard_normal(width),
            f"{prefix}.w2": scale * rng.standard_normal(width),
        }

    weights = block("k", K)
    if architecture != "k":
        weights |= block("l", L)
    if architecture == "head":
        weights |= {
            "head.V": scale * rng.standard_normal((2, 2)),
            "head.c": scale * rng.standard_normal(2),
            "head.u": scale * rng.standard_normal(2),
        }
    return EqzNetParams(architecture, K, n1, n2, weights, L if architecture != "k" else 0)


def numeric_gradient(params, Z, y, step=1e-5):
    out = {}
    for name, arr in params.weights.items():
        g = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + step
            up = loss(params, Z, y)
            arr[idx] = keep - step
            down = loss(params, Z, y)
            arr[idx] = keep
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(a, b, floor=1e-6):
    worst = 0.0
    for k in a:
        rel = np.abs(a[k] - b[k]) / np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float(rel.max()))
    return worst


# ---------------------------------------------------------------- initialization


def test_k2_initialization():
    p = init_k_eqznet(FILT, 2, alpha=2.0, w=1.0)
    np.testing.assert_array_equal(p.weights["k.W1"], np.vstack([FILT.taps, FILT.taps]))
    np.testing.assert_array_equal(p.weights["k.w2"], [2.0, -1.0])
    np.testing.assert_array_equal(p.weights["k.b1"], 0.0)


def test_k4_shift_group():
    p = init_k_eqznet(FILT, 4, alpha=3.0, w=0.5)
    W1 = p.weights["k.W1"]
    np.testing.assert_array_equal(W1[2], shifted_filter(FILT, -1))
    np.testing.assert_array_equal(W1[3], shifted_filter(FILT, 1))
    np.testing.assert_array_equal(p.weights["k.w2"], [1.5, -0.5, -0.5, -0.5])


@pytest.mark.parametrize("K", [0, 1, 3, 5])
def test_invalid_k(K):
    with pytest.raises(ValueError):
        init_k_eqznet(FILT, K)


def test_k_larger_than_shift_range():
    small = design_filter(ChannelModel.preset("h_A", 0.05), 1, 1)
    with pytest.raises(ValueError):
        init_k_eqznet(small, 8)


def test_invalid_alpha_w():
    with pytest.raises(ValueError):
        init_k_eqznet(FILT, 2, alpha=1.0)
    with pytest.raises(ValueError):
        TrainConfig(w_init=0.0)


def test_untrained_k2_is_scaled_lmmse_soft_bit():
    Z = np.random.default_rng(0).standard_normal((200, 15))
    p = init_k_eqznet(FILT, 2, alpha=2.0, w=1.5)
    np.testing.assert_allclose(forward(p, Z), (2.0 - 1.0) * 1.5 * np.tanh(Z @ FILT.taps), atol=1e-12)
    assert np.all(np.sign(forward(p, Z)) == np.sign(Z @ FILT.taps))


def test_initialized_k2_reproduces_lmmse_decisions():
    ch = ChannelModel.preset("h_A", 0.05)
    c = PamConstellation(2)
    z = apply_channel(gray_map(random_bits(10**5, 1), c), ch, 2)
    F = frame_matrix(z, 7, 7)
    p = init_k_eqznet(FILT, 2)
    assert np.array_equal(forward(p, F) < 0, F @ FILT.taps < 0)


# ---------------------------------------------------------------- forward


def test_zero_frame_gives_zero():
    assert forward(init_k_eqznet(FILT, 6), np.zeros(15)) == 0.0


def test_odd_symmetry():
    Z = np.random.default_rng(1).standard_normal((50, 15))
    p = init_k_eqznet(FILT, 6)
    p.weights["k.W1"] += 0.1
    np.testing.assert_array_equal(forward(p, -Z), -forward(p, Z))


def test_hand_forward():
    p = EqzNetParams("k", 2, 1, 0, {"k.W1": np.eye(2), "k.b1": np.zeros(2), "k.w2": np.array([2.0, -1.0])})
    assert forward(p, np.array([0.5, -0.5])) == pytest.approx(3 * np.tanh(0.5))
    assert forward(p, ObservationFrame([0.5, -0.5], 1, 0)) == pytest.approx(1.386351, abs=1e-6)


def test_geometry_mismatch():
    p = init_k_eqznet(FILT, 2)
    with pytest.raises(ValueError):
        forward(p, ObservationFrame(np.zeros(15), 6, 8))
    with pytest.raises(ValueError):
        forward(p, np.zeros(14))


# ---------------------------------------------------------------- composition


def test_sum_is_sum_of_blocks():
    rng = np.random.default_rng(3)
    k = init_k_eqznet(FILT, 4)
    l_ = init_k_eqznet(FILT, 2)
    l_.weights["k.W1"] += 0.05 * rng.standard_normal(l_.weights["k.W1"].shape)
    s = compose_sum(k, l_)
    Z = rng.standard_normal((100, 15))
    np.testing.assert_array_equal(forward(s, Z), forward(k, Z) + forward(l_, Z))
    assert s.parameter_count() == k.parameter_count() + l_.parameter_count()


def test_sum_with_zero_l_block():
    k = init_k_eqznet(FILT, 4)
    l_ = init_k_eqznet(FILT, 2)
    l_.weights["k.w2"][:] = 0
    Z = np.random.default_rng(4).standard_normal((20, 15))
    np.testing.assert_array_equal(forward(compose_sum(k, l_), Z), forward(k, Z))


def test_composition_geometry_mismatch():
    other = init_k_eqznet(design_filter(ChannelModel.preset("h_A", 0.05), 6, 8), 2)
    with pytest.raises(ValueError):
        compose_sum(init_k_eqznet(FILT, 2), other)
    with pytest.raises(ValueError):
        compose_head(init_k_eqznet(FILT, 2), other, 0)


def test_head_deterministic_per_seed():
    k, l_ = init_k_eqznet(FILT, 4), init_k_eqznet(FILT, 2)
    a, b, c = compose_head(k, l_, 5), compose_head(k, l_, 5), compose_head(k, l_, 6)
    np.testing.assert_array_equal(a.weights["head.V"], b.weights["head.V"])
    assert not np.array_equal(a.weights["head.V"], c.weights["head.V"])


def test_head_zero_weights_gives_zero():
    h = compose_head(init_k_eqznet(FILT, 4), init_k_eqznet(FILT, 2), 0)
    h.weights["head.V"][:] = 0
    Z = np.random.default_rng(5).standard_normal((10, 15))
    np.testing.assert_array_equal(forward(h, Z), 0.0)


def test_head_hand_evaluation():
    def const_block(value):
        # tanh(atanh(0.5)) * 2 * sign = +-1 for every frame
        return EqzNetParams("k", 2, 0, 0, {
            "k.W1": np.zeros((2, 1)),
            "k.b1": np.array([np.arctanh(0.5), 0.0]),
            "k.w2": np.array([2.0 * value, 0.0]),
        })

    h = compose_head(const_block(1.0), const_block(-1.0), 0)
    h.weights["head.V"] = np.eye(2)
    h.weights["head.u"] = np.array([2.0, -1.0])
    assert forward(h, np.array([0.3])) == pytest.approx(3 * np.tanh(1.0))
    assert forward(h, np.array([0.3])) == pytest.approx(2.2847, abs=1e-4)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("architecture", ["k", "sum", "head"])
def test_gradient_matches_finite_differences(architecture):
    rng = np.random.default_rng({"k": 0, "sum": 1, "head": 2}[architecture])
    worst = 0.0
    for _ in range(20):
        p = random_params(architecture, rng)
        Z = rng.standard_normal((6, 4))
        y = rng.standard_normal(6)
        worst = max(worst, max_relative_error(gradient(p, Z, y), numeric_gradient(p, Z, y)))
    assert worst < 1e-5


def test_zero_gradient_at_exact_fit():
    p = init_k_eqznet(FILT, 4)
    Z = np.random.default_rng(6).standard_normal((30, 15))
    g = gradient(p, Z, forward(p, Z))
    assert all(np.all(v == 0) for v in g.values())


def test_duplicated_batch_same_gradient():
    rng = np.random.default_rng(7)
    p = random_params("head", rng)
    Z = rng.standard_normal((5, 4))
    y = rng.standard_normal(5)
    a = gradient(p, Z, y)
    b = gradient(p, np.vstack([Z, Z]), np.concatenate([y, y]))
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)


def test_empty_batch():
    with pytest.raises(ValueError):
        loss_and_gradient(init_k_eqznet(FILT, 2), np.zeros((0, 15)), np.zeros(0))


# ---------------------------------------------------------------- training


def _small_dataset(bits=4000, snr=12.0, seed=0):
    return build_dataset(ChannelModel.preset("h_A"), PamConstellation(2), snr, bits, (7, 7), seed=seed)


def test_zero_learning_rate_leaves_params():
    ds = _small_dataset(1000)
    p = init_k_eqznet(FILT, 2)
    out, trace = train(p, ds, TrainConfig(learning_rate=0.0, epochs=2))
    for k in p.weights:
        np.testing.assert_array_equal(out.weights[k], p.weights[k])
    assert len(trace) == 2


def test_single_sample_memorization():
    p = init_k_eqznet(FILT, 2)
    Z = np.random.default_rng(8).standard_normal((1, 15))
    _, trace = train(p, (Z, np.array([3.0])), TrainConfig(learning_rate=1e-2, epochs=500, batch_size=1))
    assert trace[-1] < 1e-6


def test_training_is_deterministic_and_decreasing():
    ds = _small_dataset()
    cfg = TrainConfig(learning_rate=1e-2, epochs=6, seed=3)
    a, ta = train(init_k_eqznet(FILT, 2), ds, cfg)
    b, tb = train(init_k_eqznet(FILT, 2), ds, cfg)
    np.testing.assert_array_equal(ta, tb)
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    assert np.all(ta[1:] <= ta[:-1] * 1.05)
    initial = loss(init_k_eqznet(FILT, 2), ds.frames, ds.targets)
    assert ta[-1] <= initial


def test_learning_rate_decay_schedule():
    cfg = TrainConfig(learning_rate=1e-2, learning_rate_final=1e-4, epochs=3)
    np.testing.assert_allclose([cfg.epoch_learning_rate(e) for e in range(3)], [1e-2, 1e-3, 1e-4])
    assert TrainConfig(learning_rate=1e-2, epochs=3).epoch_learning_rate(2) == 1e-2


def test_train_accepts_labeled_frames():
    ds = _small_dataset(200)
    items = [ds[i] for i in range(len(ds))]
    cfg = TrainConfig(learning_rate=1e-3, epochs=1, batch_size=32)
    a, _ = train(init_k_eqznet(FILT, 2), items, cfg)
    b, _ = train(init_k_eqznet(FILT, 2), ds, cfg)
    np.testing.assert_array_equal(a.weights["k.W1"], b.weights["k.W1"])


def test_empty_dataset():
    with pytest.raises(ValueError):
        train(init_k_eqznet(FILT, 2), (np.zeros((0, 15)), np.zeros(0)), TrainConfig())


# ---------------------------------------------------------------- datasets


def test_dataset_regeneration_identical():
    a, b = _small_dataset(3000, seed=4), _small_dataset(3000, seed=4)
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.targets, b.targets)


def test_memoryless_labels_are_awgn_llrs():
    ds = build_dataset(ChannelModel([1.0], 1.0), PamConstellation(2), 3.0, 2000, (0, 0), seed=1)
    s2 = 1 / (2 * 10 ** 0.3)
    np.testing.assert_allclose(ds.targets, np.clip(2 * ds.frames[:, 0] / s2, -40, 40), atol=1e-9)
    assert np.max(np.abs(ds.targets)) <= 40


def test_default_bit_count():
    import inspect

    assert inspect.signature(build_dataset).parameters["bit_count"].default == 10**6


def test_4pam_dataset_is_per_bit():
    ds = build_dataset(ChannelModel.preset("h_B"), PamConstellation(4), 14.0, 400, (3, 3), seed=0)
    assert ds.targets.shape == (200, 2) and ds.bits.shape == (200, 2)
    assert ds.for_bit(1).targets.shape == (200,)


# ---------------------------------------------------------------- bank, recipes, cost


def test_per_bit_bank():
    c = PamConstellation(4)
    ch = ChannelModel.preset("h_B", 0.02)
    f = design_filter(ch, 3, 3)
    ds = build_dataset(ChannelModel.preset("h_B"), c, 14.0, 2000, (3, 3), seed=0)
    cfg = TrainConfig(learning_rate=1e-2, epochs=2)
    bank, traces = per_bit_equalizer_bank(f, c, ds, 2, cfg)
    assert isinstance(bank, EqzNetBank) and bank.bits_per_symbol == 2
    assert bank.forward(ds.frames).shape == (1000, 2)
    # each member is independent of the other bit's training
    alone, trace1 = train(bank_init(f, c, 1, cfg), ds.for_bit(1), cfg)
    np.testing.assert_array_equal(trace1, traces[1])
    with pytest.raises(ValueError):
        per_bit_equalizer_bank(f, PamConstellation(2), ds, 2, cfg)


def bank_init(f, c, bit, cfg):
    from eqzsim.eqznet import init_bit_eqznet

    return init_bit_eqznet(f, c, bit, 2, cfg.alpha, cfg.w_init)


@pytest.mark.parametrize("architecture", ["k", "sum", "head"])
def test_train_recipe_shapes(architecture):
    ds = _small_dataset(1500)
    cfg = TrainConfig(learning_rate=1e-2, epochs=1)
    model, stages = train_recipe(architecture, 4, 2, FILT, PamConstellation(2), ds, cfg)
    assert model.architecture == architecture
    assert [s for s, _ in stages] == (["k"] if architecture == "k" else ["k", "l", architecture])
    assert all(len(t) == 1 for _, t in stages)


def test_random_init_differs_from_lmmse():
    p = init_random(2, 7, 7, 0)
    assert not np.allclose(p.weights["k.W1"][0], FILT.taps)
    np.testing.assert_array_equal(p.weights["k.W1"], init_random(2, 7, 7, 0).weights["k.W1"])


def test_operation_counts():
    assert operation_count(init_k_eqznet(FILT, 2)) == 32
    assert operation_count(init_k_eqznet(FILT, 6)) == 96
    assert lmmse_operation_count(7, 7) == 15
    assert operation_count(init_k_eqznet(FILT, 2)) / lmmse_operation_count(7, 7) == pytest.approx(2.13, abs=0.01)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    p = random_params("head", rng, n1=7, n2=7, K=6, L=2)
    cfg = TrainConfig(learning_rate=3e-3, epochs=4, seed=2)
    path = save_checkpoint(tmp_path / "m.json", p, cfg, {"channel": "h_A", "M": 2, "ebn0_db": 20.0, "seed": 2})
    q, cfg2, prov = load_checkpoint(path)
    assert (q.architecture, q.K, q.L, q.n1, q.n2) == ("head", 6, 2, 7, 7)
    for k in p.weights:
        np.testing.assert_array_equal(q.weights[k], p.weights[k])
    assert cfg2 == cfg and prov["channel"] == "h_A"
    record = json.loads(path.read_text())
    assert record["members"][0]["tensors"]["k.W1"]["shape"] == [6, 15]


def test_checkpoint_bank_roundtrip(tmp_path):
    bank = EqzNetBank([init_k_eqznet(FILT, 2), init_k_eqznet(FILT, 4)])
    q, _, _ = load_checkpoint(save_checkpoint(tmp_path / "b.json", bank))
    assert isinstance(q, EqzNetBank) and q.members[1].K == 4


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(path)


@pytest.mark.parametrize("K", [4, 6])
def test_4pam_bit_init_matches_nearest_level_decisions(K):
    from eqzsim.eqznet import init_bit_eqznet

    c = PamConstellation(4)
    ch = ChannelModel.preset("h_B", 0.02)
    f = design_filter(ch, 7, 7)
    Z = frame_matrix(apply_channel(gray_map(random_bits(8000, 3), c), ch, 4), 7, 7)
    # oracle: nearest scaled level of the LMMSE estimate, then its Gray label
    est = Z @ f.taps
    nearest = np.argmin(np.abs(est[:, None] - f.gain * c.levels), axis=1)
    expected = c.bit_labels[nearest]
    for bit in range(2):
        out = forward(init_bit_eqznet(f, c, bit, K), Z)
        np.testing.assert_array_equal((out < 0).astype(int), expected[:, bit])


def test_4pam_inner_bit_with_two_neurons_uses_outer_thresholds():
    from eqzsim.eqznet import init_bit_eqznet

    c = PamConstellation(4)
    f = design_filter(ChannelModel.preset("h_B", 0.02), 7, 7)
    p = init_bit_eqznet(f, c, 1, 2)
    t = f.gain * 2 / np.sqrt(5)
    np.testing.assert_allclose(p.weights["k.b1"], [-t, t])
