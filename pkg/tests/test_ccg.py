import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from ccg_bench.ccg import (
    ABLATIONS,
    PRESETS,
    CcgConfig,
    LinearAR,
    adapt_channels,
    adjacency,
    anomaly_score,
    apply_ablation,
    build_model,
    composite_loss,
    dag_penalty,
    gate_fuse,
    linear_ar,
    load_checkpoint,
    preset_for,
    project_scores,
    save_checkpoint,
)
from ccg_bench.ccg.graph import AttentionBlock, adjacency_log_bias, masked_attention_weights
from ccg_bench.ccg.views import (
    _cycle_pooling,
    association_discrepancy,
    gaussian_prior,
    patch_coverage,
    period_pooling,
)
from ccg_bench.errors import (
    ConfigurationError,
    CoverageGapError,
    InvalidArgumentError,
    ViewConfigError,
)

SMALL = CcgConfig(d_model=8, heads=2, layers=1, rank=2, k_periods=2, patch_len=4, patch_stride=4)
ALL_VIEWS = replace(SMALL, use_patch_view=True, use_temp_view=True)


def _windows(B=2, T=16, C=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(B, T, C, generator=gen, dtype=torch.float64)


# ==================== ADJACENCY ====================
def test_adjacency_at_zero_factors_is_sigmoid_of_bias():
    U = torch.zeros(5, 3, dtype=torch.float64)
    A = adjacency(U, U.clone(), torch.tensor(-1.0, dtype=torch.float64))
    assert A.shape == (5, 5)
    assert torch.allclose(A, torch.full((5, 5), 1.0 / (1.0 + math.e), dtype=torch.float64))
    assert float(A.mean()) == pytest.approx(0.2689, abs=1e-4)


def test_initial_adjacency_is_sparse_ish():
    model = build_model(PRESETS["synthetic"], n_channels=8, window=32, seed=0)
    A = model.channel.adjacency().detach()
    assert float(A.mean()) == pytest.approx(0.269, abs=0.005)


def test_prior_mask_zeroes_excluded_edges():
    prior = np.ones((4, 4))
    prior[0, 1] = prior[2, 3] = 0.0
    model = build_model(SMALL, n_channels=4, window=16, seed=0, m_prior=prior)
    A = model.channel.adjacency().detach().numpy()
    assert A[0, 1] == 0.0 and A[2, 3] == 0.0
    assert A[1, 0] > 0.0


def test_adjacency_shape_checks():
    with pytest.raises(InvalidArgumentError):
        adjacency(torch.zeros(3, 2), torch.zeros(4, 2), torch.tensor(0.0))
    with pytest.raises(InvalidArgumentError):
        build_model(SMALL, n_channels=3, window=16, seed=0, m_prior=np.full((3, 3), 0.5))


def test_log_bias_orients_queries_on_predecessors():
    A = torch.full((3, 3), 1e-3, dtype=torch.float64)
    A[0, 1] = 1.0  # channel 0 drives channel 1
    bias = adjacency_log_bias(A)
    assert int(torch.argmax(bias[1])) == 0
    assert float(bias[1, 0]) == pytest.approx(0.0, abs=1e-6)


# ==================== ACYCLICITY ====================
def test_dag_penalty_vanishes_on_triangular_matrices():
    rng = np.random.default_rng(0)
    for c in (2, 8, 32):
        A = np.triu(rng.random((c, c)), k=1)
        assert dag_penalty(A) < 1e-10
        assert dag_penalty(A.T) < 1e-10


def test_dag_penalty_two_cycle():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert dag_penalty(A) == pytest.approx(math.cosh(1.0) - 1.0, abs=1e-9)
    assert dag_penalty(A) > 1e-3


def test_dag_penalty_torch_matches_numpy_and_gradient():
    rng = np.random.default_rng(1)
    A_np = rng.random((4, 4)) + 0.1
    A = torch.tensor(A_np, requires_grad=True)
    h = dag_penalty(A)
    assert float(h) == pytest.approx(dag_penalty(A_np), rel=1e-12)
    assert torch.autograd.gradcheck(dag_penalty, (A,), eps=1e-6, atol=1e-6)


def test_dag_penalty_rejects_negative_or_non_square():
    with pytest.raises(InvalidArgumentError):
        dag_penalty(np.array([[0.0, -1.0], [0.0, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        dag_penalty(np.zeros((2, 3)))


# ==================== VIEWS ====================
def test_all_views_forward_shapes():
    model = build_model(ALL_VIEWS, n_channels=4, window=16, seed=0)
    out = model(_windows())
    assert out.fused.shape == (2, 16, 4)
    assert set(out.reconstructions) == {"channel", "patch", "temporal"}
    assert out.gate.shape == (2, 16, 3)
    assert torch.allclose(out.gate.sum(dim=-1), torch.ones(2, 16, dtype=torch.float64))
    cues = out.cues()
    assert set(cues) == {"patch", "assoc"}
    assert cues["patch"].shape == (2, 16)
    assert cues["assoc"].shape == (2, 16)
    assert np.all(cues["assoc"] >= -1e-9)
    assert out.adjacency.shape == (4, 4)


def test_single_view_gate_is_identity():
    model = build_model(SMALL, n_channels=4, window=16, seed=0)
    out = model(_windows())
    assert model.gate is None
    assert torch.equal(out.fused, out.reconstructions["channel"])
    assert torch.all(out.gate == 1.0)
    assert out.cues() == {}


def test_disabled_views_raise():
    model = build_model(SMALL, n_channels=4, window=16, seed=0)
    with pytest.raises(ViewConfigError):
        model.patch_view_forward(_windows())
    with pytest.raises(ViewConfigError):
        model.temp_view_forward(_windows())
    patch_only = build_model(replace(SMALL, use_channel_view=False, use_patch_view=True), 4, 16, seed=0)
    with pytest.raises(ViewConfigError):
        patch_only.channel_view_forward(_windows())


def test_gate_fuse_requires_views():
    with pytest.raises(ViewConfigError):
        gate_fuse([], None)
    r = torch.ones(1, 3, 2)
    with pytest.raises(ViewConfigError):
        gate_fuse([r, r], None)


def test_period_pooling_recovers_dominant_cycle():
    t = np.arange(32)
    X = np.sin(2 * np.pi * t / 8)[None, :, None]
    ops = period_pooling(X, k=1)
    assert np.allclose(ops[0], _cycle_pooling(32, 8))
    # a full-cycle mean of a sine is zero
    assert np.allclose(ops[0] @ X[0], 0.0, atol=1e-12)
    assert np.all(period_pooling(np.zeros((1, 16, 2)), k=2) == 0.0)


def test_patch_coverage_rows_sum_to_one():
    cover = patch_coverage(16, 4, 4)
    assert cover.shape == (16, 4)
    assert np.allclose(cover.sum(axis=1), 1.0)
    tail = patch_coverage(10, 4, 4)
    assert tail.shape == (10, 2)
    assert tail[9, 1] == 1.0


def test_gaussian_prior_and_discrepancy():
    prior = gaussian_prior(torch.zeros(2, 8, dtype=torch.float64))
    assert torch.allclose(prior.sum(dim=-1), torch.ones(2, 8, dtype=torch.float64))
    assert float(association_discrepancy(prior, prior).abs().max()) < 1e-12
    uniform = torch.full_like(prior, 1.0 / 8)
    assert float(association_discrepancy(prior, uniform).min()) > 0.0


def test_association_discrepancy_two_step_value():
    P = torch.tensor([0.9, 0.1], dtype=torch.float64)
    S = torch.tensor([0.5, 0.5], dtype=torch.float64)
    expected = (0.9 * math.log(1.8) + 0.1 * math.log(0.2)) + (0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(5.0))
    assert expected == pytest.approx(0.3681 + 0.5108, abs=1e-4)
    assert float(association_discrepancy(P, S)) == pytest.approx(expected, abs=1e-6)
    assert float(association_discrepancy(S, P)) == pytest.approx(expected, abs=1e-6)


def _zero_query_key(block):
    with torch.no_grad():
        for lin in (block.query, block.key):
            lin.weight.zero_()
            lin.bias.zero_()


def test_channel_attention_follows_adjacency_columns():
    block = AttentionBlock(4, heads=1).double()
    _zero_query_key(block)
    A = torch.tensor([[0.2, 0.3], [0.8, 0.7]], dtype=torch.float64)
    x = torch.randn(1, 2, 4, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    _, attn = block(x, A)
    # query channel j weighs key channel i by A[i, j]
    assert torch.allclose(attn[0, 0], A.T, atol=1e-6)

    _, plain = block(x, torch.ones(2, 2, dtype=torch.float64))
    assert torch.allclose(plain, torch.full_like(plain, 0.5))


def test_masked_attention_weights_floor_excluded_edges():
    q = torch.zeros(1, 1, 2, 4, dtype=torch.float64)
    A = torch.tensor([[0.2, 0.3], [0.8, 0.7]], dtype=torch.float64)
    m_prior = torch.ones(2, 2, dtype=torch.float64)
    m_prior[1, 0] = 0.0
    attn = masked_attention_weights(q, q.clone(), A, m_prior)[0, 0]
    assert float(attn[0, 1]) < 1e-10
    assert float(attn[0, 0]) == pytest.approx(1.0, abs=1e-10)
    assert torch.allclose(attn[1], torch.tensor([0.3, 0.7], dtype=torch.float64), atol=1e-6)


def test_patch_cue_single_patch_is_zero():
    config = replace(SMALL, use_patch_view=True, patch_len=16, patch_stride=16)
    model = build_model(config, n_channels=4, window=16, seed=0)
    assert model.patch.n_patches == 1
    _, cue = model.patch_view_forward(_windows())
    assert cue.shape == (2, 16)
    assert torch.allclose(cue, torch.zeros_like(cue), atol=1e-12)


def test_patch_cue_uniform_attention():
    model = build_model(replace(SMALL, use_patch_view=True), n_channels=4, window=16, seed=0)
    _zero_query_key(model.patch.layers[-1])
    _, cue = model.patch_view_forward(_windows())
    n = model.patch.n_patches
    assert n == 4
    assert torch.allclose(cue, torch.full_like(cue, 1.0 - 1.0 / n), atol=1e-9)


@pytest.mark.parametrize("scale", [0.0, 1e3, 1e6])
def test_forward_stays_finite(scale):
    config = replace(ALL_VIEWS, d_model=16, heads=2, layers=2, patch_len=8, patch_stride=4)
    model = build_model(config, n_channels=8, window=32, seed=0)
    X = scale * _windows(B=4, T=32, C=8, seed=1)
    X[0, ::3] = -scale
    with torch.no_grad():
        out = model(X)
    assert torch.all(torch.isfinite(out.fused))
    assert torch.isfinite(out.prior_gap)
    for cue in out.cues().values():
        assert np.all(np.isfinite(cue))
    assert np.all(np.isfinite(anomaly_score(X.numpy(), out.fused.numpy(), out.cues(), config)))


# ==================== INITIALISATION ====================
def test_same_seed_same_parameters():
    a = build_model(ALL_VIEWS, 4, 16, seed=3)
    b = build_model(ALL_VIEWS, 4, 16, seed=3)
    c = build_model(ALL_VIEWS, 4, 16, seed=4)
    assert torch.equal(a.flat_view(), b.flat_view())
    assert not torch.equal(a.flat_view(), c.flat_view())


def test_adapt_channels_copies_shared_parameters():
    source = build_model(SMALL, n_channels=4, window=16, seed=0)
    target, fresh = adapt_channels(source, n_channels=6, seed=1)
    assert "channel.adjacency.U" in fresh
    assert "channel.embed.weight" in fresh
    source_params = dict(source.named_parameters())
    for name, param in target.named_parameters():
        if name not in fresh:
            assert torch.equal(param, source_params[name]), name
    assert target(_windows(C=6)).fused.shape == (2, 16, 6)


# ==================== LOSS AND SCORE ====================
def test_composite_loss_zero_for_perfect_acyclic_fit():
    X = _windows()
    A = torch.triu(torch.rand(4, 4, dtype=torch.float64), diagonal=1)
    total, parts = composite_loss(X, X.clone(), A, None, SMALL)
    assert float(total) < 1e-10
    assert parts["rec"] == 0.0
    assert parts["dag"] < 1e-10


def test_composite_loss_mask_doubles_weight():
    X = torch.zeros(1, 4, 2, dtype=torch.float64)
    X_hat = X.clone()
    X_hat[0, 0] = 1.0
    mask = torch.zeros(1, 4)
    mask[0, 0] = 1.0
    _, plain = composite_loss(X, X_hat, None, None, SMALL)
    _, masked = composite_loss(X, X_hat, None, mask, SMALL)
    assert plain["rec"] == pytest.approx(0.25)
    assert masked["rec"] == pytest.approx(0.4)


def test_composite_loss_dag_term():
    X = _windows(C=2)
    A = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
    total, parts = composite_loss(X, X.clone(), A, None, SMALL, lambda_dag=2.0)
    h = math.cosh(1.0) - 1.0
    assert parts["dag"] == pytest.approx(h, abs=1e-9)
    assert float(total) == pytest.approx(2.0 * h ** 2, abs=1e-9)


def test_frequency_term_is_zero_for_identical_spectra():
    X = _windows()
    total, parts = composite_loss(X, X.clone(), None, None, replace(SMALL, lambda_freq=0.5))
    assert parts["freq"] == pytest.approx(0.0, abs=1e-12)
    _, noisy = composite_loss(X, X + 0.3 * _windows(seed=1), None, None, replace(SMALL, lambda_freq=0.5))
    assert noisy["freq"] > 0.0


def test_anomaly_score_reconstruction_only():
    X = np.zeros((1, 3, 2))
    X_hat = np.zeros((1, 3, 2))
    X_hat[0, 1] = [1.0, 2.0]
    assert anomaly_score(X, X_hat, {}, SMALL).tolist() == [[0.0, 5.0, 0.0]]


def test_anomaly_score_adds_weighted_cues():
    config = replace(ALL_VIEWS, alpha=2.0, delta_p=0.5, delta_t=0.25)
    X = np.zeros((1, 2, 1))
    X_hat = np.ones((1, 2, 1))
    cues = {"patch": np.array([[1.0, 0.0]]), "assoc": np.array([[0.0, 4.0]])}
    assert anomaly_score(X, X_hat, cues, config).tolist() == [[2.5, 3.0]]


def test_anomaly_score_default_weights():
    X = np.zeros((1, 1, 1))
    X_hat = np.full((1, 1, 1), 0.2)
    cues = {"patch": np.array([[0.2]]), "assoc": np.array([[0.1]])}
    assert anomaly_score(X, X_hat, cues, ALL_VIEWS)[0, 0] == pytest.approx(0.19)


def test_anomaly_score_ignores_weights_of_disabled_views():
    X = np.zeros((2, 4, 3))
    X_hat = _windows(B=2, T=4, C=3).numpy()
    base = anomaly_score(X, X_hat, {}, SMALL)
    assert np.array_equal(anomaly_score(X, X_hat, {}, replace(SMALL, delta_p=9.0, delta_t=9.0)), base)

    no_graph = apply_ablation(replace(SMALL, delta_t=0.5), "no_channel_graph")
    assert no_graph.effective_delta_t == 0.0
    cues = {"patch": np.full((2, 4), 0.3)}
    expected = anomaly_score(X, X_hat, cues, no_graph)
    assert np.array_equal(anomaly_score(X, X_hat, cues, replace(no_graph, delta_t=50.0)), expected)
    assert np.allclose(expected, base + no_graph.delta_p * 0.3)


def test_anomaly_score_cue_consistency():
    X = np.zeros((1, 2, 1))
    with pytest.raises(ViewConfigError):
        anomaly_score(X, X, {"patch": np.zeros((1, 2))}, SMALL)
    with pytest.raises(ViewConfigError):
        anomaly_score(X, X, {"patch": np.zeros((1, 2))}, ALL_VIEWS)


# ==================== PROJECTION ====================
def test_project_scores_modes():
    scores = np.array([[1.0, 2.0], [3.0, 4.0]])
    starts = np.array([0, 1])
    assert project_scores(scores, starts, 3, "mean").tolist() == [1.0, 2.5, 4.0]
    assert project_scores(scores, starts, 3, "last").tolist() == [1.0, 2.0, 4.0]
    assert project_scores(scores, starts, 3, "max_smooth", smooth_window=1).tolist() == [1.0, 3.0, 4.0]


def test_project_scores_coverage_gaps():
    scores = np.ones((2, 2))
    with pytest.raises(CoverageGapError):
        project_scores(scores, np.array([0, 3]), 5, "mean")
    with pytest.raises(CoverageGapError):
        project_scores(np.ones((1, 2)), np.array([1]), 3, "last")
    with pytest.raises(InvalidArgumentError):
        project_scores(scores, np.array([0, 1]), 3, "median")


def test_project_mean_of_constant_windows_is_constant():
    starts = np.arange(0, 91, 10)
    timeline = project_scores(np.full((len(starts), 20), 7.0), starts, 110, "mean")
    assert np.allclose(timeline, 7.0)


# ==================== LINEAR AR ====================
def test_linear_ar_parameter_count():
    train = np.random.default_rng(0).normal(size=(200, 38))
    assert LinearAR.fit(train, 8).n_params == 304


def test_linear_ar_recovers_ar1_coefficient():
    rng = np.random.default_rng(1)
    x = np.zeros(5000)
    for t in range(1, 5000):
        x[t] = 0.8 * x[t - 1] + rng.normal()
    model = LinearAR.fit(x[:, None], order=1)
    assert model.coefficients[0, 0] == pytest.approx(0.8, abs=0.03)


def test_linear_ar_flags_spike():
    rng = np.random.default_rng(2)
    train = rng.normal(0.0, 0.1, size=(300, 3))
    test = rng.normal(0.0, 0.1, size=(100, 3))
    test[60] += 5.0
    scores = linear_ar(train, test, order=4)
    assert scores.shape == (100,)
    assert int(np.argmax(scores)) == 60


def test_linear_ar_constant_series_uses_ridge():
    model = LinearAR.fit(np.ones((50, 2)), order=3)
    assert np.all(np.isfinite(model.coefficients))


def test_linear_ar_channel_transfer_and_persistence(tmp_path):
    rng = np.random.default_rng(3)
    model = LinearAR.fit(rng.normal(size=(200, 3)), order=4)
    wider = model.for_channels(5)
    assert wider.coefficients.shape == (5, 4)
    assert np.allclose(wider.coefficients[0], model.coefficients.mean(axis=0))
    with pytest.raises(InvalidArgumentError):
        wider.score(rng.normal(size=(10, 5)))
    assert wider.score(rng.normal(size=(10, 5)), context=np.zeros((4, 5))).shape == (10,)

    back = LinearAR.load(model.save(tmp_path / "ar.npz"))
    assert np.array_equal(back.coefficients, model.coefficients)
    assert np.array_equal(back.context, model.context)


def test_linear_ar_rejects_short_train():
    with pytest.raises(InvalidArgumentError):
        LinearAR.fit(np.zeros((8, 2)), order=8)


# ==================== CONFIG ====================
def test_config_validation():
    with pytest.raises(ConfigurationError):
        CcgConfig(use_channel_view=False)
    with pytest.raises(ConfigurationError):
        CcgConfig(smooth_window=50)
    with pytest.raises(ConfigurationError):
        CcgConfig(d_model=10, heads=4)
    with pytest.raises(ConfigurationError):
        CcgConfig(lambda_prior=-0.1)


def test_presets_and_fallback():
    assert preset_for("SMD") is PRESETS["smd"]
    assert preset_for("unheard-of") is PRESETS["synthetic"]
    assert PRESETS["smap"].active_views == ["channel", "patch", "temporal"]
    assert PRESETS["msds"].score_projection == "last"


def test_ablations_change_one_component():
    base = PRESETS["synthetic"]
    variants = {name: apply_ablation(base, name) for name in ABLATIONS}
    assert not variants["no_channel_graph"].use_channel_view
    assert not variants["no_spectral"].use_spectral
    assert variants["free_adjacency"].lambda_dag == 0.0
    assert variants["no_aux_losses"].mask_rate == 0.0 and variants["no_aux_losses"].inject_rate == 0.0
    assert variants["dense_init"].adj_bias_init == 1.0
    assert all(v != base for v in variants.values())
    with pytest.raises(ConfigurationError):
        apply_ablation(base, "no_everything")


def test_config_dict_round_trip():
    assert CcgConfig.from_dict({**ALL_VIEWS.to_dict(), "unknown": 1}) == ALL_VIEWS


# ==================== CHECKPOINTS ====================
def test_checkpoint_round_trip(tmp_path):
    prior = np.ones((4, 4))
    prior[1, 2] = 0.0
    model = build_model(ALL_VIEWS, 4, 16, seed=5, m_prior=prior)
    path = save_checkpoint(model, tmp_path / "ckpt.npz")
    back = load_checkpoint(path)
    assert torch.equal(back.flat_view(), model.flat_view())
    assert torch.equal(back.channel.adjacency.m_prior, model.channel.adjacency.m_prior)
    X = _windows()
    assert torch.allclose(back(X).fused, model(X).fused)


def test_checkpoint_version_mismatch(tmp_path):
    path = save_checkpoint(build_model(SMALL, 4, 16, seed=0), tmp_path / "ckpt.npz")
    with np.load(path) as data:
        contents = {k: data[k] for k in data.files}
    manifest = json.loads(str(contents["manifest"]))
    manifest["format_version"] = 99
    contents["manifest"] = np.array(json.dumps(manifest))
    np.savez(tmp_path / "old.npz", **contents)
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "old.npz")
