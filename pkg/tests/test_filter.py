import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtfilter.errors import (
    AntipodalError,
    DegenerateConsensusError,
    DimensionMismatchError,
    InvalidParameterError,
    NonUnitDirectionError,
)
from rtfilter.filter import (
    DirectionalEvidence,
    additive_update,
    build_evidence,
    consensus,
    directional_mle,
    directional_nll,
    geodesic_step,
    irls_step,
    magnitude_update,
    slerp_update,
    tangent_project_update,
    transport_direction,
)
from rtfilter.oracles import grid_minimizer
from rtfilter.sde import RtSdeParams
from rtfilter.spectral import normalize, rope_schedule, rotate

from conftest import unit_pairs, unit_vectors


def _evidence(rng, n=6, width=3, weighted=False):
    directions = unit_vectors(rng, n, width)
    precisions = rng.uniform(0.5, 5.0, n)
    weights = rng.uniform(0.1, 1.0, n) if weighted else None
    return DirectionalEvidence(directions, precisions, weights)


def _angle(a, b):
    return math.acos(max(-1.0, min(1.0, float(a @ b))))


def test_consensus_is_convex_combination(rng):
    ev = _evidence(rng, weighted=True)
    u_bar = consensus(ev)
    assert np.linalg.norm(u_bar) <= 1.0 + 1e-12
    kt = ev.precisions * ev.weights
    np.testing.assert_allclose(u_bar, (kt / kt.sum()) @ ev.directions, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_mle_agrees_with_sphere_grid_search(seed):
    rng = np.random.default_rng(seed)
    # clustered evidence so the minimum is well defined
    center = normalize(rng.standard_normal(3))
    directions = normalize(center + 0.4 * rng.standard_normal((8, 3)))
    precisions = rng.uniform(0.5, 3.0, 8)
    u_hat = directional_mle(DirectionalEvidence(directions, precisions))
    u_grid, grid_loss = grid_minimizer(directions, precisions, resolution_deg=1.0)
    assert _angle(u_hat, u_grid) <= math.radians(1.0)
    assert directional_nll(u_hat, DirectionalEvidence(directions, precisions)) <= grid_loss + 1e-9


def test_mle_minimizes_directional_loss(rng):
    ev = _evidence(rng, n=10, width=6, weighted=True)
    u_hat = directional_mle(ev)
    best = directional_nll(u_hat, ev)
    for other in unit_vectors(rng, 200, 6):
        assert best <= directional_nll(other, ev) + 1e-12


def test_antipodal_evidence_has_no_mle():
    u = np.array([1.0, 0.0, 0.0, 0.0])
    ev = DirectionalEvidence(np.stack([u, -u]), np.array([2.0, 2.0]))
    with pytest.raises(DegenerateConsensusError):
        directional_mle(ev)


def test_evidence_validation():
    u = np.array([[1.0, 0.0]])
    with pytest.raises(InvalidParameterError):
        DirectionalEvidence(u, np.array([0.0]))
    with pytest.raises(NonUnitDirectionError):
        DirectionalEvidence(2.0 * u, np.array([1.0]))
    with pytest.raises(DimensionMismatchError):
        DirectionalEvidence(u, np.array([1.0, 2.0]))
    with pytest.raises(InvalidParameterError):
        DirectionalEvidence(u, np.array([1.0]), weights=np.array([1.5]))


def test_transport_direction_rotates():
    freqs = rope_schedule(2)
    u = normalize(np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(transport_direction(u, freqs, 2.0), rotate(u, freqs, 2.0), atol=1e-15)


@given(unit_pairs(), st.floats(0.1, 10.0), st.floats(0.0, 2.0))
@settings(max_examples=50)
def test_tangent_update_increment_is_orthogonal(pair, m, step_r):
    u, u_bar = pair
    z = m * u
    increment = tangent_project_update(z, 0.7 * u_bar, step_r) - z
    assert abs(float(increment @ z)) < 1e-10 * max(1.0, m)


def test_tangent_update_rejects_zero_state():
    with pytest.raises(InvalidParameterError):
        tangent_project_update(np.zeros(4), np.ones(4) / 2, 0.1)


def test_additive_update_adds_scaled_consensus():
    np.testing.assert_allclose(additive_update([1.0, 0.0], [0.0, 1.0], 0.5), [1.0, 0.5])


@given(unit_pairs())
@settings(max_examples=50)
def test_slerp_endpoints_and_norm(pair):
    u, v = pair
    if float(u @ v) < -0.999:
        return
    np.testing.assert_allclose(slerp_update(u, v, 0.0), u, atol=1e-12)
    np.testing.assert_allclose(slerp_update(u, v, 1.0), v, atol=1e-12)
    assert abs(np.linalg.norm(slerp_update(u, v, 0.3)) - 1.0) < 1e-10


def test_slerp_halves_the_angle():
    u = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 0.0, 0.0])
    mid = slerp_update(u, v, 0.5)
    np.testing.assert_allclose(mid, [math.sqrt(0.5), math.sqrt(0.5), 0.0, 0.0], atol=1e-15)


def test_slerp_rejects_antipodes_and_bad_fraction():
    u = np.array([1.0, 0.0])
    with pytest.raises(AntipodalError):
        slerp_update(u, -u, 0.5)
    with pytest.raises(InvalidParameterError):
        slerp_update(u, np.array([0.0, 1.0]), 1.5)


def test_small_tangent_step_matches_geodesic_step(rng):
    m, step_r = 2.0, 0.01
    u = normalize(rng.standard_normal(6))
    u_bar = 0.8 * normalize(rng.standard_normal(6))
    tangent = u_bar - float(u @ u_bar) * u
    moved = normalize(tangent_project_update(m * u, u_bar, step_r))
    matched = geodesic_step(u, normalize(u_bar), step_r * np.linalg.norm(tangent) / m)
    assert np.max(np.abs(moved - matched)) < 1e-6


def test_geodesic_step_caps_at_target():
    u = np.array([1.0, 0.0])
    v = np.array([0.0, 1.0])
    np.testing.assert_allclose(geodesic_step(u, v, 10.0), v, atol=1e-15)
    np.testing.assert_allclose(geodesic_step(u, u, 0.5), u)


def test_magnitude_update():
    u = np.array([1.0, 0.0])
    assert magnitude_update(2.0, u, np.array([0.0, 1.0]), 1.5) == pytest.approx(2.5)
    with pytest.raises(InvalidParameterError):
        magnitude_update(0.0, u, u, 0.1)


def _keys(rng, n, width):
    return [(rng.standard_normal(width) * rng.uniform(0.5, 2.0), float(t)) for t in range(n)]


def test_build_evidence_transports_keys(rng, hp, noisy_params):
    keys = _keys(rng, 5, 6)
    z = rng.standard_normal(6)
    ev = build_evidence(z, keys, 5.0, noisy_params, hp)
    freqs = noisy_params.freqs_for(3)
    for (k, t), u_hat in zip(keys, ev.directions):
        np.testing.assert_allclose(u_hat, rotate(normalize(k), freqs, 5.0 - t), atol=1e-14)
    assert np.all((ev.weights > 0) & (ev.weights <= 1))
    assert np.all(ev.precisions <= 1.0 / hp.tau_theta2)


def test_build_evidence_validates_inputs(rng, hp, noisy_params):
    with pytest.raises(InvalidParameterError):
        build_evidence(rng.standard_normal(6), [], 0.0, noisy_params, hp)
    with pytest.raises(DimensionMismatchError):
        build_evidence(rng.standard_normal(6), [(np.ones(4), 0.0)], 1.0, noisy_params, hp)


@pytest.mark.parametrize("seed", range(10))
def test_irls_step_does_not_increase_loss_of_its_evidence(seed, hp, noisy_params):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(6)
    z *= max(1.0, 0.1 / np.linalg.norm(z))
    keys = _keys(rng, 6, 6)
    ev = build_evidence(z, keys, 6.0, noisy_params, hp)
    before = directional_nll(normalize(z), ev)
    after = directional_nll(normalize(irls_step(z, keys, 6.0, noisy_params, hp)), ev)
    assert after <= before + 1e-12 * max(1.0, before)


def test_irls_step_is_a_fixed_point_on_aligned_evidence(hp):
    params = RtSdeParams(sigma_t=0.1, eta_t=0.1, omega=(0.0, 0.0))
    z = np.array([2.0, 0.0, 0.0, 0.0])
    keys = [(np.array([1.0, 0.0, 0.0, 0.0]) * s, float(t)) for t, s in enumerate([1.0, 3.0, 0.5])]
    np.testing.assert_allclose(irls_step(z, keys, 3.0, params, hp), z, atol=1e-15)


def test_zero_keys_carry_no_evidence(hp, noisy_params):
    z = np.array([0.3, 0.4, 1.0, -0.2])
    e0 = np.array([1.0, 0.0, 0.0, 0.0])
    with_zero = [(e0, 0.0), (np.zeros(4), 1.0)]
    ev = build_evidence(z, with_zero, 2.0, noisy_params, hp)
    assert len(ev) == 1
    np.testing.assert_array_equal(
        irls_step(z, with_zero, 2.0, noisy_params, hp),
        irls_step(z, [(e0, 0.0)], 2.0, noisy_params, hp),
    )


def test_all_zero_keys_leave_the_state_in_place(hp, noisy_params):
    z = np.array([0.3, 0.4, 1.0, -0.2])
    np.testing.assert_array_equal(irls_step(z, [(np.zeros(4), 0.0), (np.zeros(4), 1.0)], 2.0, noisy_params, hp), z)


@pytest.mark.parametrize("alpha", [0.01, 0.02, 0.05])
def test_tangent_update_agrees_with_geodesic_to_second_order(alpha):
    rng = np.random.default_rng(int(alpha * 1000))
    worst_geodesic, worst_step = 0.0, 0.0
    for _ in range(200):
        m = rng.uniform(0.5, 3.0)
        u = normalize(rng.standard_normal(6))
        u_bar = rng.uniform(0.2, 1.0) * normalize(rng.standard_normal(6))
        tangent = u_bar - float(u @ u_bar) * u
        step_r = alpha * m / np.linalg.norm(tangent)
        moved = normalize(tangent_project_update(m * u, u_bar, step_r))
        matched = geodesic_step(u, normalize(tangent), alpha)
        worst_geodesic = max(worst_geodesic, _angle(moved, matched) / alpha ** 2)
        worst_step = max(worst_step, abs(_angle(u, moved) / alpha - 1.0))
    assert worst_geodesic <= 10.0
    assert worst_step <= 0.05
