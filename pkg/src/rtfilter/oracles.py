"""
Slow reference implementations.

Everything here is written with explicit Python loops over tokens and complex
coordinates (cmath), sharing no code with the vectorized paths it checks
beyond the parameter models.
"""

import cmath
import math
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .attention import ProjectionSet
from .kernel import FilterHyperParams, IsotropicParams
from .sde import RtSdeParams


def _to_complex_list(row) -> list[complex]:
    return [complex(row[2 * k], row[2 * k + 1]) for k in range(len(row) // 2)]


def _to_real(z: list[complex]) -> list[float]:
    out = []
    for c in z:
        out.extend((c.real, c.imag))
    return out


def _matvec(z_row, w) -> list[float]:
    n_in, n_out = len(w), len(w[0])
    return [sum(z_row[a] * w[a][b] for a in range(n_in)) for b in range(n_out)]


def _cnorm(z: list[complex]) -> float:
    return math.sqrt(sum(abs(c) ** 2 for c in z))


def _scale(z: list[complex], s: float) -> list[complex]:
    return [c * s for c in z]


def _turn(z: list[complex], omega, t: float) -> list[complex]:
    return [c * cmath.exp(1j * omega[k] * t) for k, c in enumerate(z)]


def _re_dot(a: list[complex], b: list[complex]) -> float:
    return sum((x.conjugate() * y).real for x, y in zip(a, b))


def _softmax_row(values: list[Optional[float]], beta: float) -> list[float]:
    live = [beta * v for v in values if v is not None]
    top = max(live)
    exps = [0.0 if v is None else math.exp(beta * v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def _log_precision_rt(params: RtSdeParams, hp: FilterHyperParams, m_i: float, m_j: float, lag: float) -> float:
    def phi_loop(mu: float, dt: float) -> float:
        if mu == 0.0 or 2 * mu * dt < 1e-6:
            return dt * (1.0 - mu * dt + (2.0 / 3.0) * (mu * dt) ** 2)
        return (1.0 - math.exp(-2.0 * mu * dt)) / (2.0 * mu)

    def s_t(dt: float) -> float:
        return phi_loop(params.mu_t, dt) * params.sigma_t ** 2 + math.exp(-2 * params.mu_t * dt) * params.eta_t ** 2 + params.gamma_t ** 2

    m_hat = m_j * math.exp(-params.mu_r * lag)
    total = hp.tau_theta2
    if s_t(0.0) > 0:
        total += s_t(0.0) / (m_i ** 2 + hp.eps)
    if s_t(lag) > 0:
        total += s_t(lag) / (m_hat ** 2 + hp.eps)
    return -math.log(total)


def naive_rt_rfa(
    Z: ArrayLike,
    proj: ProjectionSet,
    params: RtSdeParams,
    hp: FilterHyperParams,
    variant: str = "tangent",
    times: Optional[ArrayLike] = None,
) -> dict:
    """O(N^2 d) single-head causal RT-RFA; returns z_plus, logits, weights, consensus."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64)).tolist()
    n = len(Z)
    times = list(range(n)) if times is None else [float(t) for t in times]
    d = proj.dim
    omega = params.freqs_for(d).omega.tolist()
    wq, wk, wv, wo = (np.asarray(w).tolist() for w in (proj.w_q, proj.w_k, proj.w_v, proj.w_o))
    width = 2 * d
    kappa_exp = hp.robust_exponent(width)

    qs, ks, vs, mags = [], [], [], []
    for row in Z:
        q = _to_complex_list(_matvec(row, wq))
        k = _to_complex_list(_matvec(row, wk))
        v = _to_complex_list(_matvec(row, wv))
        mags.append(_cnorm(v))
        qs.append(_scale(q, 1.0 / max(_cnorm(q), 1e-12)))
        ks.append(_scale(k, 1.0 / max(_cnorm(k), 1e-12)))
        vs.append(_scale(v, 1.0 / max(_cnorm(v), 1e-12)))

    logits = [[-math.inf] * n for _ in range(n)]
    weights = [[0.0] * n for _ in range(n)]
    consensus, z_plus = [], []
    for i in range(n):
        q_t = _turn(qs[i], omega, -times[i])
        row = []
        for j in range(n):
            if j > i:
                row.append(None)
                continue
            k_t = _turn(ks[j], omega, -times[j])
            lag = abs(times[i] - times[j])
            log_p = _log_precision_rt(params, hp, mags[i], mags[j], lag)
            r2 = max(_re_dot(q_t, q_t) + _re_dot(k_t, k_t) - 2.0 * _re_dot(q_t, k_t), 0.0)
            value = log_p - kappa_exp * math.log1p(math.exp(log_p) * r2 / hp.nu)
            logits[i][j] = value
            row.append(value)
        a_row = _softmax_row(row, hp.beta_s)
        weights[i] = a_row
        agg = [0j] * d
        for j in range(i + 1):
            v_t = _turn(vs[j], omega, -times[j])
            agg = [a + a_row[j] * b for a, b in zip(agg, v_t)]
        u_bar = _turn(agg, omega, times[i])
        consensus.append(_to_real(u_bar))
        if variant == "tangent":
            v2 = _re_dot(vs[i], vs[i])
            if v2 > 0:
                coef = _re_dot(vs[i], u_bar) / v2
                u_bar = [a - coef * b for a, b in zip(u_bar, vs[i])]
        inc = [hp.step_r * x for x in _to_real(u_bar)]
        out = _matvec(inc, wo)
        z_plus.append([Z[i][c] + out[c] for c in range(len(out))])

    return {
        "z_plus": np.array(z_plus),
        "logits": np.array(logits),
        "weights": np.array(weights),
        "consensus": np.array(consensus),
    }


def naive_isotropic_rfa(
    Z: ArrayLike,
    proj: ProjectionSet,
    iso: IsotropicParams,
    hp: FilterHyperParams,
    times: Optional[ArrayLike] = None,
) -> dict:
    """O(N^2 d) causal isotropic baseline; returns z_bar, logits, weights, output."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64)).tolist()
    n = len(Z)
    times = list(range(n)) if times is None else [float(t) for t in times]
    d = proj.dim
    omega = iso.freqs_for(d).omega.tolist()
    wq, wk, wv, wo = (np.asarray(w).tolist() for w in (proj.w_q, proj.w_k, proj.w_v, proj.w_o))
    kappa_exp = hp.robust_exponent(2 * d)

    def sigma2(tau: float) -> float:
        if iso.mu == 0.0 or 2 * iso.mu * tau < 1e-6:
            phi_val = tau * (1.0 - iso.mu * tau + (2.0 / 3.0) * (iso.mu * tau) ** 2)
        else:
            phi_val = (1.0 - math.exp(-2.0 * iso.mu * tau)) / (2.0 * iso.mu)
        return iso.sigma2 * phi_val + iso.eta2 * math.exp(-2.0 * iso.mu * tau) + iso.gamma2

    q_t = [_turn(_to_complex_list(_matvec(r, wq)), omega, -times[i]) for i, r in enumerate(Z)]
    k_t = [_turn(_to_complex_list(_matvec(r, wk)), omega, -times[i]) for i, r in enumerate(Z)]
    v_t = [_turn(_to_complex_list(_matvec(r, wv)), omega, -times[i]) for i, r in enumerate(Z)]

    logits = [[-math.inf] * n for _ in range(n)]
    weights = [[0.0] * n for _ in range(n)]
    outputs, z_bar = [], []
    for i in range(n):
        row = []
        for j in range(n):
            if j > i:
                row.append(None)
                continue
            lag = abs(times[i] - times[j])
            p = 1.0 / sigma2(lag)
            e = math.exp(-iso.mu * lag)
            r2 = max(_re_dot(q_t[i], q_t[i]) + e * e * _re_dot(k_t[j], k_t[j]) - 2.0 * e * _re_dot(q_t[i], k_t[j]), 0.0)
            value = math.log(p) - kappa_exp * math.log1p(p * r2 / hp.nu)
            logits[i][j] = value
            row.append(value)
        a_row = _softmax_row(row, hp.beta_s)
        weights[i] = a_row
        agg = [0j] * d
        for j in range(i + 1):
            e = math.exp(-iso.mu * abs(times[i] - times[j]))
            agg = [a + a_row[j] * e * b for a, b in zip(agg, v_t[j])]
        out = _to_real(_turn(agg, omega, times[i]))
        outputs.append(out)
        z_bar.append(_matvec(out, wo))

    return {
        "z_bar": np.array(z_bar),
        "logits": np.array(logits),
        "weights": np.array(weights),
        "output": np.array(outputs),
    }


def reference_rope_attention(
    Q: ArrayLike,
    K: ArrayLike,
    times: ArrayLike,
    omega: ArrayLike,
    score: Callable[[float], float],
    beta: float = 1.0,
) -> NDArray[np.float64]:
    """
    Plain causal softmax attention over RoPE-rotated cosine similarities
    (tokens turned by exp(-i omega t), the backward convention).

    `score` maps each cosine to a logit: a linear map gives scaled-dot
    attention, the Student-t map gives the flat-prior RT logits.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    omega = list(np.asarray(omega, dtype=np.float64))
    times = [float(t) for t in times]
    n = Q.shape[0]
    rot_q = [_turn(_to_complex_list(Q[i]), omega, -times[i]) for i in range(n)]
    rot_k = [_turn(_to_complex_list(K[j]), omega, -times[j]) for j in range(n)]
    weights = np.zeros((n, n))
    for i in range(n):
        row = []
        for j in range(n):
            if j > i:
                row.append(None)
                continue
            cos = _re_dot(rot_q[i], rot_k[j]) / (_cnorm(rot_q[i]) * _cnorm(rot_k[j]))
            row.append(score(cos))
        weights[i] = _softmax_row(row, beta)
    return weights


def flat_prior_score(hp: FilterHyperParams, width: int) -> Callable[[float], float]:
    """Logit of a unit pair with cosine c under a constant precision 1/tau^2 (row constant dropped)."""
    kappa_exp = hp.robust_exponent(width)
    precision = 1.0 / hp.tau_theta2

    def score(cos: float) -> float:
        return -kappa_exp * math.log1p(precision * max(2.0 - 2.0 * cos, 0.0) / hp.nu)

    return score


def sphere_grid(resolution_deg: float = 1.0) -> NDArray[np.float64]:
    """Points of S^2 on a (polar, azimuth) grid with the given spacing."""
    polar = np.deg2rad(np.arange(0.0, 180.0 + resolution_deg / 2, resolution_deg))
    azimuth = np.deg2rad(np.arange(0.0, 360.0, resolution_deg))
    p, a = np.meshgrid(polar, azimuth, indexing="ij")
    return np.stack([np.sin(p) * np.cos(a), np.sin(p) * np.sin(a), np.cos(p)], axis=-1).reshape(-1, 3)


def grid_minimizer(directions: ArrayLike, precisions: ArrayLike, resolution_deg: float = 1.0) -> tuple[NDArray[np.float64], float]:
    """Exhaustive minimizer of sum_j kappa_j (1 - u . u_j) over the S^2 grid."""
    grid = sphere_grid(resolution_deg)
    directions = np.asarray(directions, dtype=np.float64)
    precisions = np.asarray(precisions, dtype=np.float64)
    losses = (1.0 - grid @ directions.T) @ precisions
    best = int(np.argmin(losses))
    return grid[best], float(losses[best])
