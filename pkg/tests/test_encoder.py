import numpy as np
import pytest
from pydantic import ValidationError

from gator import layers as L
from gator.encoder import (
    EncoderConfig, SkeletonContext, attention_logits, biased_logits, encoder_forward, gcn_forward,
    graph_biases, init_encoder_params,
)
from gator.errors import DataError
from gator.numerics import ModelParams, Tensor, finite_diff_check
from gator.numerics import tensor as T
from gator.skeleton import SkeletonGraph

PARENTS = [-1, 0, 1, 1, 0, 4]


def skeleton(parents=PARENTS):
    lengths = [0.0] + [0.2 + 0.1 * k for k in range(1, len(parents))]
    return SkeletonGraph.from_parents([f"j{i}" for i in range(len(parents))], parents, lengths)


def setup(seed=0, noise=0.3, **kw):
    cfg = EncoderConfig(**{"num_layers": 2, "feature_dim": 8, "heads": 2, "edge_dim": 4, **kw})
    ctx = SkeletonContext.build(skeleton())
    params = ModelParams()
    rng = np.random.default_rng(seed)
    init_encoder_params(params, cfg, ctx, rng)
    # move every parameter off its init so zero-initialized biases matter
    for _, t in params.items():
        t.values = t.values + noise * rng.normal(size=t.shape)
    return cfg, ctx, params


def logits_oracle(X, Wq, Wk, heads):
    n, d = X.shape
    dh = d // heads
    out = np.zeros((heads, n, n))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            for j in range(n):
                q = X[i] @ Wq[:, sl]
                k = X[j] @ Wk[:, sl]
                out[h, i, j] = q @ k / np.sqrt(dh)
    return out


def test_attention_logits_match_loop_oracle():
    cfg, ctx, params = setup()
    X = np.random.default_rng(1).normal(size=(6, 8))
    A = attention_logits(Tensor(X), params, 0, cfg.heads).values
    want = logits_oracle(X, params["enc.l0.attn.Wq"].values, params["enc.l0.attn.Wk"].values, 2)
    assert np.allclose(A, want, rtol=0, atol=1e-12)


def test_biased_logits_decompose_exactly():
    cfg, ctx, params = setup()
    X = Tensor(np.random.default_rng(2).normal(size=(6, 8)))
    A = attention_logits(X, params, 0, cfg.heads)
    he, pe = graph_biases(params, cfg, ctx, 0)
    got = biased_logits(A, he, pe).values
    want = (A.values + np.moveaxis(he.values, -1, 0)) + np.moveaxis(pe.values, -1, 0)
    assert np.array_equal(got, want)
    assert np.array_equal(biased_logits(A, None, None).values, A.values)


def test_all_flags_off_is_plain_attention_plus_ffn():
    cfg, ctx, params = setup(enable_he=False, enable_pe=False, enable_gcn=False, num_layers=1,
                             enable_pos_embed=False)
    pose = np.random.default_rng(3).normal(size=(6, 2))
    out = encoder_forward(pose, params, cfg, ctx)

    X = L.linear(Tensor(pose), params["enc.embed.W"], params["enc.embed.b"])
    h = L.ln(params, "enc.l0.ln1", X)
    att, _ = L.mha(params, "enc.l0.attn", h, h, cfg.heads)
    Y = T.add(X, att)
    Y = T.add(Y, L.ffn(params, "enc.l0.ffn", L.ln(params, "enc.l0.ln2", Y)))
    feats = L.ln(params, "enc.ln_f", Y)
    assert np.allclose(out.features.values, feats.values, rtol=0, atol=1e-12)


def test_flags_change_output():
    pose = np.random.default_rng(4).normal(size=(6, 2))
    outs = []
    for flags in [{}, {"enable_he": False}, {"enable_pe": False}, {"enable_gcn": False}]:
        cfg, ctx, params = setup(**flags)
        outs.append(encoder_forward(pose, params, cfg, ctx).features.values)
    for other in outs[1:]:
        assert not np.allclose(outs[0], other)


def test_gcn_matches_oracle():
    cfg, ctx, params = setup()
    X = np.random.default_rng(5).normal(size=(6, 8))
    got = gcn_forward(Tensor(X), ctx.adjacency, params, 0).values
    M, W = params["enc.l0.gcn.M"].values, params["enc.l0.gcn.W"].values
    want = np.maximum(0.0, (ctx.adjacency + M) @ X @ W)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_batched_equals_per_sample():
    cfg, ctx, params = setup()
    poses = np.random.default_rng(6).normal(size=(3, 6, 2))
    batched = encoder_forward(poses, params, cfg, ctx)
    for b in range(3):
        single = encoder_forward(poses[b], params, cfg, ctx)
        assert np.allclose(batched.pose3d.values[b], single.pose3d.values, atol=1e-12)
        assert np.allclose(batched.attention[0].values[b], single.attention[0].values, atol=1e-12)


def test_attention_rows_are_distributions():
    cfg, ctx, params = setup()
    out = encoder_forward(np.random.default_rng(7).normal(size=(2, 6, 2)), params, cfg, ctx)
    for w in out.attention:
        assert w.shape == (2, cfg.heads, 6, 6)
        assert np.allclose(w.values.sum(-1), 1.0, atol=1e-12)
        assert np.all(w.values >= 0)


def test_output_shapes():
    cfg, ctx, params = setup()
    out = encoder_forward(np.zeros((6, 2)), params, cfg, ctx)
    assert out.features.shape == (6, 8)
    assert out.pose3d.shape == (6, 3)
    assert len(out.attention) == len(out.biases) == cfg.num_layers


def test_relabeling_joints_permutes_outputs():
    cfg, ctx, params = setup(enable_pos_embed=False)
    for i in range(cfg.num_layers):
        params[f"enc.l{i}.gcn.M"].values[:] = 0.0  # per-pair modulation is tied to labels
    perm = np.array([3, 0, 5, 1, 4, 2])
    ctx_p = SkeletonContext.build(ctx.graph.permuted(perm))
    pose = np.random.default_rng(8).normal(size=(6, 2))
    pose_p = np.empty_like(pose)
    pose_p[perm] = pose
    a = encoder_forward(pose, params, cfg, ctx)
    b = encoder_forward(pose_p, params, cfg, ctx_p)
    assert np.allclose(b.pose3d.values[perm], a.pose3d.values, atol=1e-12)
    wa, wb = a.attention[1].values, b.attention[1].values
    assert np.allclose(wb[:, perm][:, :, perm], wa, atol=1e-12)


def test_unshared_graph_encoding_has_per_layer_tables():
    cfg, ctx, params = setup(share_graph_encoding=False)
    assert "enc.l0.ge.hop_table" in params and "enc.l1.ge.hop_table" in params
    assert "enc.ge.hop_table" not in params
    he0, _ = graph_biases(params, cfg, ctx, 0)
    he1, _ = graph_biases(params, cfg, ctx, 1)
    assert not np.array_equal(he0.values, he1.values)


@pytest.mark.parametrize("bad", [np.zeros((5, 2)), np.zeros((6, 3)), np.zeros(12),
                                 np.full((6, 2), np.nan), np.zeros((1, 1, 6, 2))])
def test_bad_pose_rejected(bad):
    cfg, ctx, params = setup()
    with pytest.raises(DataError):
        encoder_forward(bad, params, cfg, ctx)


@pytest.mark.parametrize("kw", [{"feature_dim": 10, "heads": 4}, {"num_layers": 0},
                                {"path_weights": "whatever"}, {"unknown": 1}])
def test_bad_config_rejected(kw):
    with pytest.raises(ValidationError):
        EncoderConfig(**kw)


@pytest.mark.parametrize("path_weights", ["shared", "per_pair"])
def test_encoder_gradients_match_finite_differences(path_weights):
    cfg, ctx, params = setup(path_weights=path_weights)
    rng = np.random.default_rng(9)
    pose = rng.normal(size=(2, 6, 2))
    target = rng.normal(size=(2, 6, 3))

    def loss():
        out = encoder_forward(pose, params, cfg, ctx)
        return T.mean(T.square(T.sub(out.pose3d, Tensor(target))))

    res = finite_diff_check(loss, params.trainable(), max_coords=20)
    assert res.ok, res.failure
    assert res.max_rel_error < 1e-5, res.worst
