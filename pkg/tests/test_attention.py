import numpy as np
import pytest

from rtfilter.attention import (
    ComplexSeq,
    ProjectionSet,
    attention_weights,
    causal_mask,
    isotropic_rfa_forward,
    multihead_forward,
    precision_kernel,
    project_and_normalize,
    rope_rotate_seq,
    rt_rfa_forward,
    spherical_logits,
    split_heads,
    tangent_residual_block,
)
from rtfilter.errors import DimensionMismatchError, InvalidParameterError
from rtfilter.kernel import FilterHyperParams, IsotropicParams
from rtfilter.oracles import flat_prior_score, naive_isotropic_rfa, naive_rt_rfa, reference_rope_attention
from rtfilter.sde import RtSdeParams
from rtfilter.spectral import rope_schedule

N, D, N_MODEL = 7, 3, 10


@pytest.fixture
def instance(rng):
    Z = rng.standard_normal((N, N_MODEL))
    proj = ProjectionSet.random(N_MODEL, D, rng, init="pseudo_identity")
    return Z, proj


def _finite_close(a, b, tol):
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    mask = np.isfinite(a)
    assert np.max(np.abs(a[mask] - b[mask])) < tol


@pytest.mark.parametrize("variant", ["tangent", "additive"])
def test_rt_rfa_matches_loop_oracle(instance, noisy_params, hp, variant):
    Z, proj = instance
    z_plus, u_plus, trace = rt_rfa_forward(Z, proj, noisy_params, hp, variant=variant)
    naive = naive_rt_rfa(Z, proj, noisy_params, hp, variant=variant)
    np.testing.assert_allclose(z_plus, naive["z_plus"], atol=1e-10)
    np.testing.assert_allclose(trace.weights, naive["weights"], atol=1e-10)
    np.testing.assert_allclose(trace.consensus, naive["consensus"], atol=1e-10)
    _finite_close(trace.logits, naive["logits"], 1e-10)
    np.testing.assert_allclose(np.linalg.norm(u_plus, axis=-1), 1.0, atol=1e-12)


def test_rt_rfa_matches_oracle_on_irregular_times(instance, noisy_params, hp):
    Z, proj = instance
    times = np.array([0.0, 0.5, 0.5, 2.0, 3.7, 4.0, 9.0])
    z_plus, _, trace = rt_rfa_forward(Z, proj, noisy_params, hp, times=times)
    naive = naive_rt_rfa(Z, proj, noisy_params, hp, times=times)
    np.testing.assert_allclose(z_plus, naive["z_plus"], atol=1e-10)
    np.testing.assert_allclose(trace.weights, naive["weights"], atol=1e-10)


def test_isotropic_matches_loop_oracle(instance, hp):
    Z, proj = instance
    iso = IsotropicParams(mu=0.2, sigma2=0.09, eta2=0.01, gamma2=0.01)
    z_bar, trace = isotropic_rfa_forward(Z, proj, iso, hp)
    naive = naive_isotropic_rfa(Z, proj, iso, hp)
    np.testing.assert_allclose(z_bar, naive["z_bar"], atol=1e-10)
    np.testing.assert_allclose(trace.weights, naive["weights"], atol=1e-10)
    np.testing.assert_allclose(trace.output, naive["output"], atol=1e-10)
    np.testing.assert_allclose(trace.decayed_weights, trace.weights * trace.decay)


def test_weights_are_causal_and_row_stochastic(instance, noisy_params, hp):
    Z, proj = instance
    _, _, trace = rt_rfa_forward(Z, proj, noisy_params, hp)
    np.testing.assert_allclose(trace.weights.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(trace.weights[~causal_mask(N)] == 0.0)
    assert np.all(np.isneginf(trace.logits[~causal_mask(N)]))
    assert np.all(np.linalg.norm(trace.consensus, axis=-1) <= 1.0 + 1e-12)


def test_future_tokens_do_not_change_earlier_outputs(instance, noisy_params, hp, rng):
    Z, proj = instance
    j = 4
    perturbed = Z.copy()
    perturbed[j:] += rng.standard_normal((N - j, N_MODEL))
    base, _, _ = rt_rfa_forward(Z, proj, noisy_params, hp)
    moved, _, _ = rt_rfa_forward(perturbed, proj, noisy_params, hp)
    np.testing.assert_array_equal(base[:j], moved[:j])
    assert not np.array_equal(base[j:], moved[j:])


def test_non_causal_attention_sees_the_future(instance, noisy_params, hp, rng):
    Z, proj = instance
    perturbed = Z.copy()
    perturbed[-1] += 1.0
    base, _, _ = rt_rfa_forward(Z, proj, noisy_params, hp, causal=False)
    moved, _, _ = rt_rfa_forward(perturbed, proj, noisy_params, hp, causal=False)
    assert not np.allclose(base[0], moved[0])


def test_logits_are_invariant_to_a_common_time_shift(instance, noisy_params, hp):
    Z, proj = instance
    times = np.arange(N, dtype=float)
    _, _, base = rt_rfa_forward(Z, proj, noisy_params, hp, times=times)
    _, _, shifted = rt_rfa_forward(Z, proj, noisy_params, hp, times=times + 5.0)
    _finite_close(base.logits, shifted.logits, 1e-10)


def test_tangent_increment_is_orthogonal_to_value_direction(instance, noisy_params, hp):
    Z, proj = instance
    _, _, trace = rt_rfa_forward(Z, proj, noisy_params, hp, variant="tangent")
    assert np.max(np.abs(np.sum(trace.directions * trace.increment, axis=-1))) < 1e-12


def test_single_token_attends_to_itself(noisy_params, hp, rng):
    proj = ProjectionSet.identity(D)
    z = rng.standard_normal((1, 2 * D))
    z_plus, _, trace = rt_rfa_forward(z, proj, noisy_params, hp)
    assert trace.weights.tolist() == [[1.0]]
    np.testing.assert_allclose(trace.consensus, trace.directions, atol=1e-14)
    np.testing.assert_allclose(z_plus, z, atol=1e-14)


def test_flat_prior_reduces_to_robust_rope_attention(instance, hp):
    Z, proj = instance
    flat = RtSdeParams(mu_r=0.3, mu_t=0.1)
    _, _, trace = rt_rfa_forward(Z, proj, flat, hp, variant="additive")
    Q, K, _, _ = project_and_normalize(Z, proj)
    expected = reference_rope_attention(
        Q.tokens, K.tokens, np.arange(N), rope_schedule(D).omega, flat_prior_score(hp, 2 * D), hp.beta_s,
    )
    np.testing.assert_allclose(trace.weights, expected, atol=1e-10)
    np.testing.assert_allclose(trace.precision, 1.0 / hp.tau_theta2)


def test_single_head_multihead_is_the_single_head_forward(instance, noisy_params, hp):
    Z, proj = instance
    single = rt_rfa_forward(Z, proj, noisy_params, hp)
    multi = multihead_forward(Z, proj, noisy_params, hp)
    np.testing.assert_array_equal(single[0], multi[0])
    np.testing.assert_array_equal(single[2].weights, multi[2][0].weights)


def test_multihead_uses_per_head_slices(rng, hp):
    d = 4
    proj = ProjectionSet.random(12, d, rng, n_heads=2, init="pseudo_identity")
    params = [RtSdeParams(sigma_t=0.3, eta_t=0.1), RtSdeParams(mu_r=0.5, sigma_t=0.1, eta_t=0.2)]
    Z = rng.standard_normal((5, 12))
    z_plus, _, traces = multihead_forward(Z, proj, params, hp)
    assert [t.block for t in traces] == [(0, 2), (2, 4)]
    assert all(t.consensus.shape == (5, 4) for t in traces)
    increment = np.concatenate([t.increment for t in traces], axis=-1)
    np.testing.assert_allclose(z_plus, Z + increment @ proj.w_o, atol=1e-14)
    assert not np.allclose(traces[0].weights, traces[1].weights)


def test_multihead_rejects_wrong_parameter_count(instance, noisy_params, hp):
    Z, _ = instance
    proj = ProjectionSet.identity(D, n_heads=3)
    with pytest.raises(DimensionMismatchError):
        multihead_forward(Z[:, : 2 * D], proj, [noisy_params, noisy_params], hp)


def test_pseudo_identity_round_trips_eigenbasis(rng):
    proj = ProjectionSet.random(12, 4, rng, init="pseudo_identity")
    np.testing.assert_allclose(proj.w_o @ proj.w_v, np.eye(8), atol=1e-12)


def test_projection_set_validation(rng):
    with pytest.raises(DimensionMismatchError):
        ProjectionSet(np.eye(4), np.eye(4), np.eye(4), np.eye(6)[:4])
    with pytest.raises(InvalidParameterError):
        ProjectionSet(np.eye(4), np.eye(4), np.eye(4), np.eye(4), heads=((0, 1),))
    with pytest.raises(DimensionMismatchError):
        ProjectionSet.random(6, 4, rng, init="identity")


def test_split_heads():
    assert split_heads(5, 2) == ((0, 3), (3, 5))
    with pytest.raises(InvalidParameterError):
        split_heads(2, 3)


def test_complex_seq_validation():
    with pytest.raises(InvalidParameterError):
        ComplexSeq(np.zeros((2, 4)), np.array([1.0, 0.0]))
    with pytest.raises(DimensionMismatchError):
        ComplexSeq(np.zeros((2, 4)), np.array([0.0]))
    with pytest.raises(DimensionMismatchError):
        ComplexSeq(np.zeros((2, 3)), np.array([0.0, 1.0]))


def test_rope_rotate_seq_round_trip(rng):
    seq = ComplexSeq(rng.standard_normal((4, 6)), np.arange(4.0))
    freqs = rope_schedule(3)
    back = rope_rotate_seq(rope_rotate_seq(seq, freqs, -1), freqs, 1)
    np.testing.assert_allclose(back.tokens, seq.tokens, atol=1e-14)
    with pytest.raises(InvalidParameterError):
        rope_rotate_seq(seq, freqs, 2)


def test_precision_kernel_bounds_and_time_checks(noisy_params, hp):
    M = np.array([0.5, 1.0, 2.0])
    P = precision_kernel(M, np.array([0.0, 1.0, 2.0]), noisy_params, hp)
    assert P.shape == (3, 3)
    assert np.all((P > 0) & (P <= 1.0 / hp.tau_theta2))
    with pytest.raises(InvalidParameterError):
        precision_kernel(M, np.array([0.0, 2.0, 1.0]), noisy_params, hp)


def test_spherical_logits_checks_precision_shape(rng, hp):
    seq = ComplexSeq(rng.standard_normal((3, 4)), np.arange(3.0))
    with pytest.raises(DimensionMismatchError):
        spherical_logits(seq, seq, np.ones((2, 3)), hp)


def test_attention_weights_temperature():
    logits = np.array([[0.0, np.log(2.0)], [0.0, -np.inf]])
    weights = attention_weights(logits, beta_s=2.0)
    np.testing.assert_allclose(weights, [[0.2, 0.8], [1.0, 0.0]], atol=1e-15)


def test_hyperparameter_temperature_sharpens_weights(instance, noisy_params):
    Z, proj = instance
    soft = rt_rfa_forward(Z, proj, noisy_params, FilterHyperParams(beta_s=0.5))[2].weights
    sharp = rt_rfa_forward(Z, proj, noisy_params, FilterHyperParams(beta_s=4.0))[2].weights
    assert np.all(sharp.max(axis=-1) >= soft.max(axis=-1) - 1e-12)


def test_projected_queries_and_keys_are_unit_with_magnitudes_split_off(instance):
    Z, proj = instance
    Q, K, V, M = project_and_normalize(Z, proj)
    np.testing.assert_allclose(np.linalg.norm(Q.tokens, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(K.tokens, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(M, np.linalg.norm(Z @ proj.w_v, axis=-1), rtol=1e-12)


def test_orthogonal_pair_logit_has_closed_form():
    q = ComplexSeq(np.array([[1.0, 0.0, 0.0, 0.0]]), np.zeros(1))
    k = ComplexSeq(np.array([[0.0, 0.0, 1.0, 0.0]]), np.zeros(1))
    hp = FilterHyperParams(nu=1.0, kappa_exp=1.0)
    logits = spherical_logits(q, k, np.ones((1, 1)), hp)
    assert logits[0, 0] == pytest.approx(-np.log(3.0), abs=1e-15)


def test_aligned_pair_logit_is_log_precision(hp):
    q = ComplexSeq(np.array([[0.6, 0.0, 0.0, 0.8]]), np.zeros(1))
    logits = spherical_logits(q, q, np.full((1, 1), 1.0 / hp.tau_theta2), hp)
    assert logits[0, 0] == pytest.approx(np.log(1.0 / hp.tau_theta2), abs=1e-12)


def test_spherical_logits_match_scalar_loop(rng, hp):
    n, d = 8, 4
    q = ComplexSeq(rng.standard_normal((n, 2 * d)), np.arange(float(n)))
    q = ComplexSeq(q.tokens / np.linalg.norm(q.tokens, axis=-1, keepdims=True), q.times)
    k = ComplexSeq(rng.standard_normal((n, 2 * d)), np.arange(float(n)))
    k = ComplexSeq(k.tokens / np.linalg.norm(k.tokens, axis=-1, keepdims=True), k.times)
    precision = rng.uniform(0.5, 50.0, (n, n))
    mask = causal_mask(n)
    logits = spherical_logits(q, k, precision, hp, mask)
    kappa = hp.robust_exponent(2 * d)
    for i in range(n):
        for j in range(n):
            if j > i:
                assert logits[i, j] == -np.inf
                continue
            r2 = 2.0 - 2.0 * sum(q.tokens[i, c] * k.tokens[j, c] for c in range(2 * d))
            expected = np.log(precision[i, j]) - kappa * np.log(1.0 + precision[i, j] * r2 / hp.nu)
            assert abs(logits[i, j] - expected) < 1e-10, f"({i}, {j})"


def _unit_tokens(rng, n, width):
    tokens = rng.standard_normal((n, width))
    return tokens / np.linalg.norm(tokens, axis=-1, keepdims=True)


def test_consensus_parallel_to_value_leaves_stream_unchanged(rng):
    proj = ProjectionSet.random(12, 4, rng, init="pseudo_identity")
    Z = rng.standard_normal((5, 12))
    V = ComplexSeq(_unit_tokens(rng, 5, 8), np.arange(5.0))
    u_bar = ComplexSeq(0.7 * V.tokens, V.times)
    z_plus, increment = tangent_residual_block(Z, V, u_bar, proj, step_r=0.3)
    np.testing.assert_allclose(increment, 0.0, atol=1e-15)
    np.testing.assert_allclose(z_plus, Z, atol=1e-14)
    z_still, _ = tangent_residual_block(Z, V, ComplexSeq(_unit_tokens(rng, 5, 8), V.times), proj, step_r=0.0)
    np.testing.assert_array_equal(z_still, Z)


def test_orthogonal_consensus_moves_stream_by_step_times_norm(rng):
    proj = ProjectionSet.random(12, 4, rng, init="pseudo_identity")
    Z = rng.standard_normal((5, 12))
    V = _unit_tokens(rng, 5, 8)
    U = rng.standard_normal((5, 8))
    U = U - np.sum(U * V, axis=-1, keepdims=True) * V
    z_plus, increment = tangent_residual_block(Z, ComplexSeq(V, np.arange(5.0)), ComplexSeq(U, np.arange(5.0)), proj, 0.25)
    np.testing.assert_allclose(np.linalg.norm(z_plus - Z, axis=-1), 0.25 * np.linalg.norm(U, axis=-1), rtol=1e-12)
    np.testing.assert_allclose(np.sum(increment * V, axis=-1), 0.0, atol=1e-12)


def test_forward_update_is_the_tangent_residual_block(instance, noisy_params, hp):
    Z, proj = instance
    z_plus, _, trace = rt_rfa_forward(Z, proj, noisy_params, hp)
    _, _, V, _ = project_and_normalize(Z, proj)
    expected, increment = tangent_residual_block(Z, V, ComplexSeq(trace.consensus, V.times), proj, hp.step_r)
    np.testing.assert_array_equal(z_plus, expected)
    np.testing.assert_array_equal(trace.increment, increment)


def test_forward_logits_are_the_spherical_logits(instance, noisy_params, hp):
    Z, proj = instance
    _, _, trace = rt_rfa_forward(Z, proj, noisy_params, hp)
    Q, K, _, _ = project_and_normalize(Z, proj)
    freqs = noisy_params.freqs_for(D)
    logits = spherical_logits(
        rope_rotate_seq(Q, freqs, -1), rope_rotate_seq(K, freqs, -1), trace.precision, hp, causal_mask(N),
    )
    np.testing.assert_array_equal(trace.logits, logits)


def test_zero_token_row_stays_row_stochastic(noisy_params, hp):
    Z = np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    _, _, trace = rt_rfa_forward(Z, ProjectionSet.identity(2), noisy_params, hp)
    assert np.all(trace.precision > 0)
    np.testing.assert_allclose(trace.weights.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("active", [0, 1])
def test_multihead_head_matches_single_head_run_on_its_subspace(rng, hp, active):
    d = 4
    proj = ProjectionSet.identity(d, n_heads=2)
    params = [
        RtSdeParams(mu_r=0.2, sigma_t=0.3, eta_t=0.1, omega=(1.0, 0.3)),
        RtSdeParams(mu_r=0.5, sigma_t=0.1, eta_t=0.2, omega=(0.7, 0.05)),
    ]
    # the other head's block is zero, so global magnitudes equal the subspace magnitudes
    Z = np.zeros((6, 2 * d))
    cols = slice(4 * active, 4 * active + 4)
    Z[:, cols] = rng.standard_normal((6, 4))
    _, _, traces = multihead_forward(Z, proj, params, hp)
    _, _, single = rt_rfa_forward(Z[:, cols], ProjectionSet.identity(2), params[active], hp)
    np.testing.assert_allclose(traces[active].weights, single.weights, atol=1e-13)
    np.testing.assert_allclose(traces[active].consensus, single.consensus, atol=1e-13)
