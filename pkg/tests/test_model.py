import math

import numpy as np
import pytest

import mkdata
from hotgrid import autodiff as ad
from hotgrid import model
from hotgrid.errors import DataError, ShapeError

SMALL = model.ModelConfig(d1=4, d2=4, hidden=4)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


# --- edge weighting -----------------------------------------------------------


def test_edge_weights_examples():
    w = model.edge_weights(np.array([0.0, 5.0, 10.0]), np.array([0, 0, 0]), 1)
    assert np.allclose(w, [1.0, 0.5, 0.0])
    assert np.allclose(model.edge_weights(np.array([7.5]), np.array([0]), 1), [1.0])


def test_edge_weights_group_per_destination():
    d = np.array([1.0, 3.0, 10.0, 20.0])
    dst = np.array([0, 0, 1, 1])
    assert np.allclose(model.edge_weights(d, dst, 2), [1.0, 0.0, 1.0, 0.0])


def test_edge_weights_scale_invariant():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.1, 5.0, size=12)
    dst = rng.integers(0, 4, size=12)
    base = model.edge_weights(d, dst, 4)
    for c in (1e-3, 2.0, 750.0):
        assert np.max(np.abs(model.edge_weights(c * d, dst, 4) - base)) <= 1e-12


def test_edge_norm_degenerate_rows_are_zero():
    n = model.edge_norm(np.array([4.0, 4.0]), np.array([0, 0]), 1)
    assert np.allclose(n, [0.0, 0.0])


# --- convolution layers --------------------------------------------------------


def _handmade_params():
    cfg = model.ModelConfig(d1=2, d2=2, hidden=2)
    t = {name: ad.Tensor(np.zeros(shape)) for name, shape in model.param_shapes(cfg).items()}
    t["w_alpha"].data[0] = [1.0, 0.5]
    t["w_alpha"].data[1] = [-0.3, 0.8]
    t["w_alpha"].data[2] = [0.2, -0.4]
    t["b_ew"].data[:] = [0.1, -0.2]
    t["w_phi"].data[:] = [[0.9, 0.1], [-0.2, 0.7]]
    t["b_phi"].data[:] = [0.05, 0.05]
    t["w_theta"].data[:] = [[0.5, 0.0], [0.0, 0.5]]
    t["b_theta"].data[:] = [0.0, 0.1]
    for gate, scale in (("f", 0.1), ("i", 0.2), ("c", 0.3), ("o", -0.1)):
        t[f"w_lstm_{gate}"].data[:] = scale
    t["b_lstm_f"].data[:] = 1.0
    t["b_lstm_o"].data[:] = 0.2
    t["w_head"].data[0, 0] = 1.2
    t["w_head"].data[1, 1] = -0.7
    t["b_head"].data[2] = 0.3
    return model.ModelParams(config=cfg, tensors=t)


def test_ew_conv_isolated_node_is_self_only():
    params = _handmade_params()
    snap = mkdata.snapshot([1])
    prep = model.prepare_snapshot(snap, params.config)
    h1 = model.ew_conv(prep, params)
    expect = np.maximum(snap.X @ params["w_alpha"].data + params["b_ew"].data, 0.0)
    assert np.allclose(h1.data, expect)


def test_ew_conv_single_edge_adds_neighbor():
    cfg = model.ModelConfig(d1=32, d2=4, hidden=4)
    t = {name: ad.Tensor(np.zeros(shape)) for name, shape in model.param_shapes(cfg).items()}
    t["w_alpha"].data[:] = np.eye(32)
    params = model.ModelParams(config=cfg, tensors=t)
    snap = mkdata.snapshot([0, 1], edges=[(1, 0)], dists=[5.0])
    prep = model.prepare_snapshot(snap, cfg)
    h1 = model.ew_conv(prep, params)
    assert np.allclose(h1.data[0], np.maximum(snap.X[0] + snap.X[1], 0.0))
    assert np.allclose(h1.data[1], np.maximum(snap.X[1], 0.0))


def test_ew_conv_zero_features_gives_relu_bias():
    params = _handmade_params()
    snap = mkdata.snapshot([0, 1])
    snap.X[:] = 0.0
    prep = model.prepare_snapshot(snap, params.config)
    h1 = model.ew_conv(prep, params)
    expect = np.maximum(params["b_ew"].data, 0.0)
    assert np.allclose(h1.data, np.tile(expect, (2, 1)))


def test_ee_conv_isolated_node():
    params = _handmade_params()
    snap = mkdata.snapshot([1])
    prep = model.prepare_snapshot(snap, params.config)
    h1 = model.ew_conv(prep, params)
    h2 = model.ee_conv(prep, h1, params)
    keep = h1.data @ params["w_theta"].data + params["b_theta"].data
    expect = np.maximum(params["b_phi"].data + keep, 0.0)
    assert np.allclose(h2.data, expect)


def test_readout_conventions():
    params = _handmade_params()
    one = model.prepare_snapshot(mkdata.snapshot([3]), params.config)
    h2 = model.ee_conv(one, model.ew_conv(one, params), params)
    assert np.allclose(model.readout(h2).data[0], h2.data[0])
    empty = model.prepare_snapshot(mkdata.snapshot([]), params.config)
    assert np.allclose(model.snapshot_embedding(empty, params).data, 0.0)


# --- recurrence and head --------------------------------------------------------


def test_lstm_zero_params_outputs_zero():
    cfg = SMALL
    t = {name: ad.Tensor(np.zeros(shape)) for name, shape in model.param_shapes(cfg).items()}
    params = model.ModelParams(config=cfg, tensors=t)
    xs = [ad.Tensor(np.ones((2, cfg.d2))) for _ in range(5)]
    out = model.lstm_forward(xs, params)
    assert np.allclose(out.data, 0.0)


def test_lstm_single_step_manual():
    params = _handmade_params()
    x = np.array([[0.3, -0.4]])
    z = np.concatenate([np.zeros((1, 2)), x], axis=1)
    f = _sig(z @ params["w_lstm_f"].data + 1.0)
    i = _sig(z @ params["w_lstm_i"].data)
    g = np.tanh(z @ params["w_lstm_c"].data)
    o = _sig(z @ params["w_lstm_o"].data + 0.2)
    expect = o * np.tanh(i * g)
    got = model.lstm_forward([ad.Tensor(x)], params)
    assert np.allclose(got.data, expect, atol=1e-12)


def test_head_conventions():
    cfg = SMALL
    t = {name: ad.Tensor(np.zeros(shape)) for name, shape in model.param_shapes(cfg).items()}
    params = model.ModelParams(config=cfg, tensors=t)
    out = model.head(ad.Tensor(np.zeros((3, cfg.hidden))), params)
    assert out.data.shape == (3, 32)
    assert np.allclose(out.data, 0.5)
    t["b_head"].data[7] = 10.0
    hi = model.head(ad.Tensor(np.zeros((1, cfg.hidden))), params).data[0, 7]
    t["b_head"].data[7] = -10.0
    lo = model.head(ad.Tensor(np.zeros((1, cfg.hidden))), params).data[0, 7]
    assert lo < 0.5 < hi and hi > 0.99 and lo < 0.01


# --- full forward ---------------------------------------------------------------


def test_forward_manual_trace():
    """Rebuild the whole forward pass with plain numpy, then compare."""
    params = _handmade_params()
    wa, be = params["w_alpha"].data, params["b_ew"].data
    wp, bp = params["w_phi"].data, params["b_phi"].data
    wt, bt = params["w_theta"].data, params["b_theta"].data
    wh, bh = params["w_head"].data, params["b_head"].data

    seq = mkdata.sequence(
        [
            mkdata.snapshot([0, 1, 2], edges=[(1, 0), (2, 0)], dists=[5.0, 10.0], window=0),
            mkdata.snapshot([2], window=1),
        ]
    )

    # window 0: node 0 hears node 1 (nearer, weight 1) and node 2 (weight 0)
    X0 = seq.snapshots[0].X
    A = np.eye(3)
    A[0, 1] = 1.0
    A[0, 2] = 0.0
    h1 = np.maximum(A @ (X0 @ wa) + be, 0.0)
    keep = h1 @ wt + bt
    # distance gates into node 0: nearer edge 0, farther edge 1; selfs 0
    m_from1 = (h1[1] * 0.0) @ wp + bp
    m_from2 = (h1[2] * 1.0) @ wp + bp
    m_self = bp
    rows0 = np.maximum(np.stack([m_from1 + keep[0], m_from2 + keep[0], m_self + keep[0]]), 0.0)
    h2_0 = rows0.max(axis=0)
    h2_1 = np.maximum(bp + keep[1], 0.0)
    h2_2 = np.maximum(bp + keep[2], 0.0)
    r0 = np.stack([h2_0, h2_1, h2_2]).mean(axis=0, keepdims=True)

    # window 1: a lone node in sub-area 2
    X1 = seq.snapshots[1].X
    h1b = np.maximum(X1 @ wa + be, 0.0)
    r1 = np.maximum(bp + (h1b @ wt + bt), 0.0)

    # recurrence
    h = c = np.zeros((1, 2))
    for x in (r0, r1):
        z = np.concatenate([h, x], axis=1)
        f = _sig(z @ params["w_lstm_f"].data + params["b_lstm_f"].data)
        i = _sig(z @ params["w_lstm_i"].data + params["b_lstm_i"].data)
        g = np.tanh(z @ params["w_lstm_c"].data + params["b_lstm_c"].data)
        o = _sig(z @ params["w_lstm_o"].data + params["b_lstm_o"].data)
        c = f * c + i * g
        h = o * np.tanh(c)
    expect = _sig(h @ wh + bh)[0]

    got = model.forward(seq, params)
    assert got.shape == (32,)
    assert np.allclose(got, expect, atol=1e-12)


def test_forward_permutation_invariant():
    rng = np.random.default_rng(21)
    params = mkdata.random_params(rng, SMALL)
    for _ in range(5):
        seq = mkdata.random_sequence(rng, T=3, min_nodes=2, max_nodes=5)
        base = model.forward(seq, params)
        shuffled = mkdata.sequence(
            [
                mkdata.permuted_copy(s, rng.permutation(s.n_nodes))
                for s in seq.snapshots
            ],
            seq.label,
        )
        assert np.max(np.abs(model.forward(shuffled, params) - base)) <= 1e-12


def test_forward_distance_scale_invariant():
    rng = np.random.default_rng(22)
    params = mkdata.random_params(rng, SMALL)
    seq = mkdata.random_sequence(rng, T=3)
    base = model.forward(seq, params)
    for c in (1e-3, 3.0, 1e4):
        scaled = mkdata.sequence(
            [
                mkdata.snapshot(
                    [mkdata.CODES.index(code) for code in s.codes],
                    s.edges.tolist(),
                    (s.dists * c).tolist(),
                    window=s.window,
                )
                for s in seq.snapshots
            ],
            seq.label,
        )
        assert np.max(np.abs(model.forward(scaled, params) - base)) <= 1e-12


def test_forward_all_empty_is_head_of_zero_recurrence():
    rng = np.random.default_rng(23)
    params = mkdata.random_params(rng, SMALL)
    seq = mkdata.sequence([mkdata.snapshot([], window=t) for t in range(4)])
    got = model.forward(seq, params)
    xs = [ad.Tensor(np.zeros((1, SMALL.d2))) for _ in range(4)]
    expect = model.head(model.lstm_forward(xs, params), params).data[0]
    assert np.allclose(got, expect, atol=0.0)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(24)
    params = mkdata.random_params(rng, SMALL)
    seqs = [mkdata.random_sequence(rng, T=2) for _ in range(3)]
    preps = model.prepare_all(seqs, SMALL)
    batch = model.forward_batch(preps, params).data
    for k, seq in enumerate(seqs):
        assert np.allclose(batch[k], model.forward(seq, params), atol=1e-14)


def test_forward_batch_rejects_mixed_T():
    rng = np.random.default_rng(25)
    params = mkdata.random_params(rng, SMALL)
    preps = model.prepare_all(
        [mkdata.random_sequence(rng, T=2), mkdata.random_sequence(rng, T=3)], SMALL
    )
    with pytest.raises(ShapeError):
        model.forward_batch(preps, params)


def test_input_normalization_divides_by_sequence_peak():
    rng = np.random.default_rng(26)
    params = mkdata.random_params(rng, SMALL)  # normalize_input on by default
    # four requests in one sub-area: peak intensity 4
    seq = mkdata.sequence([mkdata.snapshot([7, 7, 7, 7], window=0), mkdata.snapshot([3], window=1)])
    manual = mkdata.sequence(
        [mkdata.snapshot([7, 7, 7, 7], window=0), mkdata.snapshot([3], window=1)]
    )
    for s in manual.snapshots:
        s.X = s.X / 4.0
    raw_cfg = model.ModelConfig(d1=SMALL.d1, d2=SMALL.d2, hidden=SMALL.hidden, normalize_input=False)
    raw_params = model.ModelParams(config=raw_cfg, tensors=params.tensors)
    assert np.allclose(
        model.forward(seq, params), model.forward(manual, raw_params), atol=1e-14
    )


def test_undirected_flag_mirrors_edges():
    params = _handmade_params()
    snap = mkdata.snapshot([0, 1], edges=[(0, 1)], dists=[5.0])
    directed = model.prepare_snapshot(snap, params.config)
    undirected_cfg = model.ModelConfig(d1=2, d2=2, hidden=2, undirected=True)
    mirrored = model.prepare_snapshot(snap, undirected_cfg)
    assert len(directed.msg_src) == 1 + 2  # one edge + two self messages
    assert len(mirrored.msg_src) == 2 + 2
    assert mirrored.A_w[0, 1] == 1.0 and mirrored.A_w[1, 0] == 1.0


# --- loss -----------------------------------------------------------------------


def test_bce_at_half_is_ln2():
    probs = ad.Tensor(np.full((2, 32), 0.5))
    loss = model.bce_loss(probs, np.zeros((2, 32)))
    assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_goes_to_zero_at_perfect():
    y = np.zeros((1, 32))
    y[0, 3] = 1.0
    probs = ad.Tensor(np.where(y == 1.0, 1.0 - 1e-9, 1e-9))
    assert float(model.bce_loss(probs, y).data) < 1e-6


def test_bce_weight_doubles_positive_term_only():
    y = np.array([[1.0, 0.0]])
    p = np.array([[0.6, 0.3]])
    base_pos = -math.log(0.6)
    base_neg = -math.log(0.7)
    w1 = float(model.bce_loss(ad.Tensor(p), y, pos_weight=1.0).data)
    w2 = float(model.bce_loss(ad.Tensor(p), y, pos_weight=2.0).data)
    assert w1 == pytest.approx((base_pos + base_neg) / 2.0, abs=1e-12)
    assert w2 == pytest.approx((2.0 * base_pos + base_neg) / 2.0, abs=1e-12)


def test_bce_clamps_extremes_finite():
    y = np.array([[1.0, 0.0]])
    loss = model.bce_loss(ad.Tensor(np.array([[0.0, 1.0]])), y)
    assert np.isfinite(float(loss.data))


def test_bce_validates_inputs():
    with pytest.raises(ShapeError):
        model.bce_loss(ad.Tensor(np.zeros((1, 4))), np.zeros((1, 5)))
    with pytest.raises(DataError):
        model.bce_loss(ad.Tensor(np.full((1, 2), 0.5)), np.array([[0.0, 0.4]]))


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(31)
    params = mkdata.random_params(rng, SMALL)
    seq = mkdata.random_sequence(rng, T=2)
    before = model.forward(seq, params)
    path = tmp_path / "ckpt.json"
    model.save_params(params, path)
    loaded = model.load_params(path)
    assert loaded.config == params.config
    after = model.forward(seq, loaded)
    assert np.array_equal(before, after)


def test_checkpoint_rejects_bad_files(tmp_path):
    rng = np.random.default_rng(32)
    params = mkdata.random_params(rng, SMALL)
    path = tmp_path / "ckpt.json"
    model.save_params(params, path)

    import json

    doc = json.loads(path.read_text())
    doc["tensors"]["w_alpha"]["shape"] = [4, 4]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        model.load_params(bad)

    doc = json.loads(path.read_text())
    del doc["tensors"]["w_head"]
    bad.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        model.load_params(bad)

    bad.write_text("{\"format\": \"something-else\"}")
    with pytest.raises(DataError):
        model.load_params(bad)
    bad.write_text("not json")
    with pytest.raises(DataError):
        model.load_params(bad)


def test_checkpoint_bytes_deterministic(tmp_path):
    rng = np.random.default_rng(33)
    params = mkdata.random_params(rng, SMALL)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    model.save_params(params, a)
    model.save_params(params, b)
    assert a.read_bytes() == b.read_bytes()


# --- gradients through the whole model ---------------------------------------------


def test_full_model_gradcheck_small():
    # the seed matters: it must keep every true gradient far enough from
    # zero that central-difference cancellation noise stays below the
    # relative-error floor
    rng = np.random.default_rng(0)
    cfg = model.ModelConfig(d1=3, d2=3, hidden=3)
    params = mkdata.random_params(rng, cfg)
    seqs = [mkdata.random_sequence(rng, T=3, min_nodes=2, max_nodes=3) for _ in range(2)]
    preps = model.prepare_all(seqs, cfg)
    labels = np.stack([p.label for p in preps])

    def loss_fn():
        return model.bce_loss(model.forward_batch(preps, params), labels, pos_weight=1.7)

    worst = ad.grad_check(loss_fn, params.ordered())
    assert worst < 1e-4, f"worst rel err {worst:.3e}"
