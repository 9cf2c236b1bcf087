"""Heads: normalization, the reduction equivalences, convexity, and
gradients of the depth-attention parameters."""
import copy

import numpy as np
import pytest

from gedlab.encoder import ModelConfig
from gedlab.heads import (
    AttentionRecord, AvglHeadParams, FinalHeadParams, MhmlaHeadParams,
    avgl_forward, final_layer_forward, init_head_params,
    layer_attention_weights, mhmla_forward,
)
from gedlab.tensor import (
    Tensor, cross_entropy, finite_diff_check, no_grad, reset_graph,
)


@pytest.fixture(autouse=True)
def clean_tape():
    reset_graph()
    yield
    reset_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def cfg_for(head_type="mhmla", **overrides) -> ModelConfig:
    base = dict(n_layers=3, hidden=8, self_attn_heads=2, ffn_dim=16,
                layer_attn_heads=2, vocab_size=20, max_len=12,
                dropout=0.0, attn_dropout=0.0, head_type=head_type)
    base.update(overrides)
    return ModelConfig(**base)


def random_states(rng, cfg, n_tokens=5):
    return [Tensor(rng.normal(size=(n_tokens, cfg.hidden)))
            for _ in range(cfg.n_layers + 1)]


class TestShapes:
    def test_probs_shape_and_rows_sum(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        with no_grad():
            probs, record = mhmla_forward(states, params, cfg)
        assert probs.shape == (5, 2)
        assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)
        assert record.weights.shape == (5, cfg.layer_attn_heads, cfg.n_layers)

    @pytest.mark.parametrize("j", [1, 8])
    def test_head_count_degeneracy(self, rng, j):
        cfg = cfg_for(layer_attn_heads=j)
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        with no_grad():
            probs, record = mhmla_forward(states, params, cfg)
        assert probs.shape == (5, 2)
        assert record.weights.shape == (5, j, cfg.n_layers)

    def test_rejects_wrong_state_count(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng)
        states = random_states(rng, cfg)[:-1]
        with pytest.raises(ValueError, match="layer states"):
            mhmla_forward(states, params, cfg)

    def test_final_head_matches_numpy(self, rng):
        cfg = cfg_for("final")
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        with no_grad():
            probs = final_layer_forward(states, params, cfg)
        logits = states[-1].data @ params.w_out.data + params.b_out.data
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        assert np.allclose(probs.data, e / e.sum(axis=1, keepdims=True),
                           atol=1e-14)

    def test_avgl_head_matches_numpy(self, rng):
        cfg = cfg_for("avgl")
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        with no_grad():
            probs = avgl_forward(states, params, cfg)
        c = np.mean([states[l + 1].data @ params.w_proj[l].data
                     + params.b_proj[l].data
                     for l in range(cfg.n_layers)], axis=0)
        logits = c @ params.w_out.data + params.b_out.data
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        assert np.allclose(probs.data, e / e.sum(axis=1, keepdims=True),
                           atol=1e-14)


class TestAttentionWeights:
    def test_normalized_on_random_inputs(self, rng):
        cfg = cfg_for()
        for _ in range(100):
            params = init_head_params(cfg, rng, init_std=0.5)
            states = random_states(rng, cfg, n_tokens=int(rng.integers(1, 7)))
            with no_grad():
                record = layer_attention_weights(states, params, cfg)
            sums = record.weights.sum(axis=2)
            assert np.all(np.abs(sums - 1.0) < 1e-9)
            assert np.all(record.weights >= 0.0)

    def test_raising_a_layer_logit_raises_its_weight(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        bumped = copy.deepcopy(params)
        bumped.b_a[1][0].data[0] += 0.7
        with no_grad():
            before = layer_attention_weights(states, params, cfg).weights
            after = layer_attention_weights(states, bumped, cfg).weights
        assert np.all(after[:, 0, 1] > before[:, 0, 1])
        # the other head is untouched
        assert np.array_equal(after[:, 1, :], before[:, 1, :])

    def test_attention_dropout_zeroes_without_renormalizing(self, rng):
        cfg = cfg_for(attn_dropout=0.5)
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg, n_tokens=40)
        with no_grad():
            record = layer_attention_weights(
                states, params, cfg, train_mode=True,
                rng=np.random.default_rng(5))
        w = record.weights
        assert (w == 0.0).any()
        sums = w.sum(axis=2)
        assert np.abs(sums - 1.0).max() > 1e-3

    def test_record_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="n, J, L"):
            AttentionRecord(np.zeros((3, 4)))


class TestReductions:
    def test_one_hot_forcing_equals_composed_final_head(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        n, J, L = 5, cfg.layer_attn_heads, cfg.n_layers
        one_hot = np.zeros((n, J, L))
        one_hot[:, :, L - 1] = 1.0
        with no_grad():
            forced, _ = mhmla_forward(states, params, cfg,
                                      attention_override=one_hot)
        # concat of last-layer value projections is a single linear map
        w_cat = np.concatenate([params.w_v[L - 1][j].data for j in range(J)],
                               axis=1)
        b_cat = np.concatenate([params.b_v[L - 1][j].data for j in range(J)])
        composed = FinalHeadParams(
            w_out=Tensor(w_cat @ params.w_out.data),
            b_out=Tensor(b_cat @ params.w_out.data + params.b_out.data))
        final_cfg = cfg_for("final")
        with no_grad():
            direct = final_layer_forward(states, composed, final_cfg)
        assert np.abs(forced.data - direct.data).max() < 1e-10

    def test_uniform_forcing_single_head_equals_avgl(self, rng):
        cfg = cfg_for(layer_attn_heads=1)
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        n, L = 5, cfg.n_layers
        uniform = np.full((n, 1, L), 1.0 / L)
        with no_grad():
            forced, _ = mhmla_forward(states, params, cfg,
                                      attention_override=uniform)
        copied = AvglHeadParams(
            w_proj=[params.w_v[l][0] for l in range(L)],
            b_proj=[params.b_v[l][0] for l in range(L)],
            w_out=params.w_out, b_out=params.b_out)
        with no_grad():
            direct = avgl_forward(states, copied, cfg_for("avgl"))
        assert np.abs(forced.data - direct.data).max() < 1e-12

    def test_tied_params_identical_layers_ignore_score_logits(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng, init_std=0.5)
        L, J = cfg.n_layers, cfg.layer_attn_heads
        for l in range(1, L):
            for j in range(J):
                params.w_v[l][j].data = params.w_v[0][j].data.copy()
                params.b_v[l][j].data = params.b_v[0][j].data.copy()
        h = Tensor(rng.normal(size=(5, cfg.hidden)))
        states = [h] * (L + 1)
        other = copy.deepcopy(params)
        for l in range(L):
            for j in range(J):
                other.w_a[l][j].data = rng.normal(size=(cfg.key_dim, 1)) * 3
                other.b_a[l][j].data = rng.normal(size=1)
        with no_grad():
            a, _ = mhmla_forward(states, params, cfg)
            b, _ = mhmla_forward(states, other, cfg)
        assert np.abs(a.data - b.data).max() < 1e-12


class TestConvexity:
    def test_head_output_stays_in_value_hull(self, rng):
        cfg = cfg_for()
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg)
        L, J = cfg.n_layers, cfg.layer_attn_heads
        width = cfg.hidden // J
        with no_grad():
            _, record = mhmla_forward(states, params, cfg)
        for j in range(J):
            v = np.stack([states[l + 1].data @ params.w_v[l][j].data
                          + params.b_v[l][j].data for l in range(L)])
            mixed = np.einsum("nl,lnd->nd", record.weights[:, j, :], v)
            lo, hi = v.min(axis=0), v.max(axis=0)
            assert np.all(mixed >= lo - 1e-12)
            assert np.all(mixed <= hi + 1e-12)


class TestGradients:
    def test_mhmla_params_pass_fd(self, rng):
        cfg = cfg_for(n_layers=2)
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg, n_tokens=4)
        targets = [0, 1, 1, 0]

        def f():
            probs, _ = mhmla_forward(states, params, cfg)
            return cross_entropy(probs, targets)

        report = finite_diff_check(f, list(params.named()), eps=1e-5, tol=1e-4)
        assert report.passed, (
            f"max rel err {report.max_rel_err:.3e} at {report.worst_param}")

    def test_avgl_params_pass_fd(self, rng):
        cfg = cfg_for("avgl", n_layers=2)
        params = init_head_params(cfg, rng, init_std=0.5)
        states = random_states(rng, cfg, n_tokens=4)
        targets = [1, 0, 0, 1]

        def f():
            return cross_entropy(avgl_forward(states, params, cfg), targets)

        report = finite_diff_check(f, list(params.named()), eps=1e-5, tol=1e-4)
        assert report.passed, (
            f"max rel err {report.max_rel_err:.3e} at {report.worst_param}")
