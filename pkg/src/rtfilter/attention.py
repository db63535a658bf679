"""
Sequence-level radial-tangential robust filter attention (RT-RFA).

Row-vector convention throughout: a sequence Z is (N, n_model), projections
map Z @ W -> (N, 2d) eigenbasis tokens, and W_o maps (N, 2d) back to (N, n_model).

Forward pass per head:
  1. project, record value magnitudes M, normalize Q, K, V
  2. rotate everything backward by exp(-i omega t_i)
  3. analytic precision P_ij from magnitudes and lags
  4. robust spherical logits and a masked softmax
  5. aggregate rotated values, counter-rotate forward
  6. tangent residual update, then map back through W_o
"""

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import softmax

from .errors import DimensionMismatchError, InvalidParameterError
from .kernel import (
    FilterHyperParams,
    IsotropicParams,
    directional_precision,
    isotropic_sigma2,
    robust_weight,
    transported_magnitude,
)
from .sde import RtSdeParams
from .spectral import RotationFreqs, normalize, rotate

Variant = Literal["tangent", "additive"]
Init = Literal["identity", "pseudo_identity", "random"]


# ------------------------------
# Data Classes
# ------------------------------

@dataclass(frozen=True)
class ComplexSeq:
    """
    Tokens in the eigenbasis with their timestamps.
    - tokens: (N, 2d) interleaved complex vectors.
    - times: (N,) nondecreasing timestamps.
    """
    tokens: NDArray[np.float64] = field(repr=False)
    times: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if tokens.ndim != 2 or tokens.shape[1] % 2:
            raise DimensionMismatchError(f"tokens must be (N, 2d), got {tokens.shape}")
        if tokens.shape[0] != times.shape[0]:
            raise DimensionMismatchError(f"{tokens.shape[0]} tokens but {times.shape[0]} timestamps")
        if np.any(np.diff(times) < 0):
            raise InvalidParameterError("timestamps must be nondecreasing")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1] // 2

    def block(self, start: int, stop: int) -> "ComplexSeq":
        """Complex coordinates [start, stop) of every token."""
        return ComplexSeq(self.tokens[:, 2 * start:2 * stop], self.times)


@dataclass(frozen=True)
class ProjectionSet:
    """
    Real maps realizing the complex projections.
    - w_q, w_k, w_v: (n_model, 2d).
    - w_o: (2d, n_model).
    - heads: contiguous complex-coordinate blocks [start, stop) partitioning 0..d-1.
    """
    w_q: NDArray[np.float64] = field(repr=False)
    w_k: NDArray[np.float64] = field(repr=False)
    w_v: NDArray[np.float64] = field(repr=False)
    w_o: NDArray[np.float64] = field(repr=False)
    heads: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        mats = [np.asarray(w, dtype=np.float64) for w in (self.w_q, self.w_k, self.w_v, self.w_o)]
        w_q, w_k, w_v, w_o = mats
        if not (w_q.shape == w_k.shape == w_v.shape) or w_q.ndim != 2 or w_q.shape[1] % 2:
            raise DimensionMismatchError("w_q, w_k, w_v must share one (n_model, 2d) shape")
        if w_o.shape != (w_q.shape[1], w_q.shape[0]):
            raise DimensionMismatchError(f"w_o must be {(w_q.shape[1], w_q.shape[0])}, got {w_o.shape}")
        d = w_q.shape[1] // 2
        heads = tuple(tuple(h) for h in self.heads) or ((0, d),)
        cursor = 0
        for start, stop in heads:
            if start != cursor or stop <= start:
                raise InvalidParameterError(f"head blocks {heads} do not partition 0..{d - 1}")
            cursor = stop
        if cursor != d:
            raise InvalidParameterError(f"head blocks {heads} do not partition 0..{d - 1}")
        for name, w in zip(("w_q", "w_k", "w_v", "w_o"), mats):
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        object.__setattr__(self, "heads", heads)

    @property
    def n_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def dim(self) -> int:
        return self.w_q.shape[1] // 2

    @classmethod
    def identity(cls, d: int, n_heads: int = 1) -> "ProjectionSet":
        eye = np.eye(2 * d)
        return cls(eye, eye, eye, eye, heads=split_heads(d, n_heads))

    @classmethod
    def random(
        cls,
        n_model: int,
        d: int,
        rng: np.random.Generator,
        n_heads: int = 1,
        init: Init = "pseudo_identity",
    ) -> "ProjectionSet":
        """Gaussian Q/K maps; `pseudo_identity` pairs an orthonormal W_v with W_o = W_v^T."""
        if init == "identity":
            if n_model != 2 * d:
                raise DimensionMismatchError("identity projections need n_model == 2d")
            return cls.identity(d, n_heads)
        scale = 1.0 / np.sqrt(n_model)
        w_q = rng.standard_normal((n_model, 2 * d)) * scale
        w_k = rng.standard_normal((n_model, 2 * d)) * scale
        if init == "pseudo_identity":
            if 2 * d > n_model:
                raise DimensionMismatchError("pseudo-identity needs 2d <= n_model")
            w_v, _ = np.linalg.qr(rng.standard_normal((n_model, 2 * d)))
            w_o = w_v.T
        else:
            w_v = rng.standard_normal((n_model, 2 * d)) * scale
            w_o = rng.standard_normal((2 * d, n_model)) / np.sqrt(2 * d)
        return cls(w_q, w_k, w_v, w_o, heads=split_heads(d, n_heads))


@dataclass(frozen=True)
class AttentionTrace:
    """
    Everything one head computed, for inspection and the IRLS loss.
    - magnitudes: (N,) value norms M before normalization (global across heads).
    - transported: (N, N) key magnitudes carried across each lag, M_hat.
    - precision: (N, N) P.
    - robust: (N, N) robust weights w.
    - logits: (N, N) L, -inf where masked.
    - weights: (N, N) A.
    - consensus: (N, 2d_h) U_bar.
    - increment: (N, 2d_h) step_r * (projected) U_bar, the eigenbasis update.
    - directions: (N, 2d_h) unit head slices of V, the states the loss is measured at.
    - evidence_sum, evidence_mass: G_i = sum_j kappa~_ij u_hat_ij and S_i = sum_j kappa~_ij.
    - loss: (N,) directional NLL S_i - <u_i, G_i>.
    """
    magnitudes: NDArray[np.float64] = field(repr=False)
    transported: NDArray[np.float64] = field(repr=False)
    precision: NDArray[np.float64] = field(repr=False)
    robust: NDArray[np.float64] = field(repr=False)
    logits: NDArray[np.float64] = field(repr=False)
    weights: NDArray[np.float64] = field(repr=False)
    consensus: NDArray[np.float64] = field(repr=False)
    increment: NDArray[np.float64] = field(repr=False)
    directions: NDArray[np.float64] = field(repr=False)
    evidence_sum: NDArray[np.float64] = field(repr=False)
    evidence_mass: NDArray[np.float64] = field(repr=False)
    loss: NDArray[np.float64] = field(repr=False)
    block: tuple[int, int] = (0, 0)

    def surrogate(self, directions: ArrayLike) -> NDArray[np.float64]:
        """This head's evidence evaluated at other unit directions (N, 2d_h)."""
        return self.evidence_mass - np.sum(np.asarray(directions) * self.evidence_sum, axis=-1)


@dataclass(frozen=True)
class IsotropicTrace:
    precision: NDArray[np.float64] = field(repr=False)
    decay: NDArray[np.float64] = field(repr=False)
    logits: NDArray[np.float64] = field(repr=False)
    weights: NDArray[np.float64] = field(repr=False)
    decayed_weights: NDArray[np.float64] = field(repr=False)
    output: NDArray[np.float64] = field(repr=False)


# ------------------------------
# Helpers
# ------------------------------

def split_heads(d: int, n_heads: int) -> tuple[tuple[int, int], ...]:
    """Contiguous, near-equal blocks; the first d % H heads get one extra coordinate."""
    if n_heads < 1 or n_heads > d:
        raise InvalidParameterError(f"cannot split {d} coordinates into {n_heads} heads")
    sizes = [d // n_heads + (1 if h < d % n_heads else 0) for h in range(n_heads)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return tuple((int(bounds[h]), int(bounds[h + 1])) for h in range(n_heads))


def causal_mask(n: int) -> NDArray[np.bool_]:
    return np.tril(np.ones((n, n), dtype=bool))


def default_times(n: int) -> NDArray[np.float64]:
    return np.arange(n, dtype=np.float64)


def _mask_for(n: int, mask: Optional[ArrayLike], causal: bool) -> NDArray[np.bool_]:
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, n):
            raise DimensionMismatchError(f"mask must be {(n, n)}, got {mask.shape}")
        return mask
    return causal_mask(n) if causal else np.ones((n, n), dtype=bool)


def _lags(times: NDArray) -> NDArray:
    return np.abs(times[:, None] - times[None, :])


# ------------------------------
# Algorithm steps
# ------------------------------

def project_and_normalize(
    Z: ArrayLike,
    proj: ProjectionSet,
    times: Optional[ArrayLike] = None,
    eps: float = 1e-12,
) -> tuple[ComplexSeq, ComplexSeq, ComplexSeq, NDArray[np.float64]]:
    """Q, K, V unit tokens plus the value magnitudes M taken before normalization."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != proj.n_model:
        raise DimensionMismatchError(f"input width {Z.shape[1]} does not match projections ({proj.n_model})")
    times = default_times(Z.shape[0]) if times is None else np.asarray(times, dtype=np.float64)
    values = Z @ proj.w_v
    magnitudes = np.linalg.norm(values, axis=-1)
    Q = ComplexSeq(normalize(Z @ proj.w_q, eps), times)
    K = ComplexSeq(normalize(Z @ proj.w_k, eps), times)
    V = ComplexSeq(normalize(values, eps), times)
    return Q, K, V, magnitudes


def rope_rotate_seq(X: ComplexSeq, freqs: RotationFreqs, sign: int) -> ComplexSeq:
    if sign not in (1, -1):
        raise InvalidParameterError(f"sign must be +1 or -1, got {sign}")
    return ComplexSeq(rotate(X.tokens, freqs, sign * X.times), X.times)


def precision_kernel(
    M: ArrayLike,
    times: ArrayLike,
    params: RtSdeParams,
    hp: FilterHyperParams,
) -> NDArray[np.float64]:
    """P[i, j] = directional_precision(M_i, M_j, |t_i - t_j|)."""
    M = np.asarray(M, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) < 0):
        raise InvalidParameterError("timestamps must be nondecreasing")
    return np.asarray(directional_precision(hp, params, M[:, None], M[None, :], _lags(times)))


def _robust_residual(
    q_tilde: NDArray, k_tilde: NDArray, precision: NDArray, hp: FilterHyperParams,
    decay: float | NDArray = 1.0,
) -> tuple[NDArray, NDArray]:
    """Whitened residual P |R|^2 and the robust log-penalty kappa log(1 + P|R|^2 / nu)."""
    q2 = np.sum(q_tilde * q_tilde, axis=-1)[:, None]
    k2 = np.sum(k_tilde * k_tilde, axis=-1)[None, :]
    r2 = np.maximum(q2 + decay ** 2 * k2 - 2.0 * decay * (q_tilde @ k_tilde.T), 0.0)
    d2 = precision * r2
    return d2, hp.robust_exponent(q_tilde.shape[1]) * np.log1p(d2 / hp.nu)


def spherical_logits(
    q_tilde: ComplexSeq,
    k_tilde: ComplexSeq,
    precision: ArrayLike,
    hp: FilterHyperParams,
    mask: Optional[ArrayLike] = None,
) -> NDArray[np.float64]:
    """
    L = log P - kappa_exp log(1 + P |R|^2 / nu), with the general residual
    |R|^2 = |Q|^2 + |K|^2 - 2 Re(Q~^H K~), which is 2 - 2 cos for unit tokens.
    """
    precision = np.asarray(precision, dtype=np.float64)
    n = len(q_tilde)
    if precision.shape != (n, len(k_tilde)):
        raise DimensionMismatchError(f"precision must be {(n, len(k_tilde))}, got {precision.shape}")
    _, penalty = _robust_residual(q_tilde.tokens, k_tilde.tokens, precision, hp)
    logits = np.log(precision) - penalty
    if mask is not None:
        logits = np.where(np.asarray(mask, dtype=bool), logits, -np.inf)
    return logits


def attention_weights(logits: ArrayLike, beta_s: float, mask: Optional[ArrayLike] = None) -> NDArray[np.float64]:
    """Row softmax of beta_s * L over unmasked entries; masked entries are exactly zero."""
    logits = np.asarray(logits, dtype=np.float64)
    keep = np.isfinite(logits) if mask is None else np.asarray(mask, dtype=bool) & (logits > -np.inf)
    scaled = np.where(keep, beta_s * np.where(keep, logits, 0.0), -np.inf)
    return np.where(keep, softmax(scaled, axis=-1), 0.0)


def aggregate_counter_rotate(
    v_tilde: ComplexSeq,
    weights: ArrayLike,
    freqs: RotationFreqs,
    times: Optional[ArrayLike] = None,
) -> ComplexSeq:
    """U_bar_i = exp(+i omega t_i) sum_j A_ij V~_j."""
    times = v_tilde.times if times is None else np.asarray(times, dtype=np.float64)
    aggregated = np.asarray(weights, dtype=np.float64) @ v_tilde.tokens
    return ComplexSeq(rotate(aggregated, freqs, times), times)


def _tangent_part(V: NDArray, U: NDArray) -> NDArray:
    """Remove the V-parallel part of U row by row; zero rows of V pass U through."""
    v2 = np.sum(V * V, axis=-1)
    safe = np.where(v2 > 0, v2, 1.0)
    coef = np.where(v2 > 0, np.sum(V * U, axis=-1) / safe, 0.0)
    return U - coef[:, None] * V


def _residual_increment(V: NDArray, U: NDArray, step_r: float, variant: Variant) -> NDArray:
    if variant == "tangent":
        U = _tangent_part(V, U)
    elif variant != "additive":
        raise InvalidParameterError(f"unknown residual variant {variant!r}")
    return step_r * U


def tangent_residual_block(
    Z: ArrayLike,
    V: ComplexSeq,
    u_bar: ComplexSeq,
    proj: ProjectionSet,
    step_r: float,
    variant: Variant = "tangent",
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Z+ = Z + (step_r * Pi_V(U_bar)) W_o; returns (Z+, eigenbasis increment)."""
    increment = _residual_increment(V.tokens, u_bar.tokens, step_r, variant)
    return np.asarray(Z, dtype=np.float64) + increment @ proj.w_o, increment


# ------------------------------
# Forward passes
# ------------------------------

def _attend_head(
    Q: ComplexSeq,
    K: ComplexSeq,
    V: ComplexSeq,
    magnitudes: NDArray,
    params: RtSdeParams,
    hp: FilterHyperParams,
    freqs: RotationFreqs,
    mask: NDArray,
) -> dict:
    q_t = rope_rotate_seq(Q, freqs, -1)
    k_t = rope_rotate_seq(K, freqs, -1)
    v_t = rope_rotate_seq(V, freqs, -1)
    lags = _lags(Q.times)
    precision = precision_kernel(magnitudes, Q.times, params, hp)
    logits = spherical_logits(q_t, k_t, precision, hp, mask)
    d2, _ = _robust_residual(q_t.tokens, k_t.tokens, precision, hp)
    weights = attention_weights(logits, hp.beta_s, mask)
    u_bar = aggregate_counter_rotate(v_t, weights, freqs)

    # kappa~ = P w = exp(L) on unmasked pairs; loss directions are the unit value slices
    robust = np.asarray(robust_weight(hp, d2, q_t.tokens.shape[1]))
    kt = np.where(mask, precision * robust, 0.0)
    unit_v = normalize(v_t.tokens)
    evidence_sum = rotate(kt @ unit_v, freqs, Q.times)
    evidence_mass = kt.sum(axis=-1)
    directions = normalize(V.tokens)
    return dict(
        transported=np.asarray(transported_magnitude(magnitudes[None, :], params.mu_r, lags)),
        precision=precision,
        robust=robust,
        logits=logits,
        weights=weights,
        consensus=u_bar,
        directions=directions,
        evidence_sum=evidence_sum,
        evidence_mass=evidence_mass,
        loss=evidence_mass - np.sum(directions * evidence_sum, axis=-1),
    )


def _head_freqs(params: RtSdeParams, d: int, block: tuple[int, int]) -> RotationFreqs:
    start, stop = block
    if params.omega is not None and len(params.omega) == stop - start:
        return RotationFreqs(np.asarray(params.omega))
    return params.freqs_for(d)[start:stop]


def _forward(
    Z: ArrayLike,
    proj: ProjectionSet,
    heads: Sequence[tuple[int, int]],
    head_params: Sequence[RtSdeParams],
    hp: FilterHyperParams,
    variant: Variant,
    times: Optional[ArrayLike],
    causal: bool,
) -> tuple[NDArray, NDArray, list[AttentionTrace]]:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] < 1:
        raise InvalidParameterError("attention needs at least one token")
    if len(head_params) != len(heads):
        raise DimensionMismatchError(f"{len(heads)} heads but {len(head_params)} parameter sets")
    Q, K, V, magnitudes = project_and_normalize(Z, proj, times)
    mask = _mask_for(len(Q), None, causal)
    d = proj.dim

    traces, consensus = [], []
    for block, params in zip(heads, head_params):
        start, stop = block
        parts = _attend_head(
            Q.block(start, stop), K.block(start, stop), V.block(start, stop),
            magnitudes, params, hp, _head_freqs(params, d, block), mask,
        )
        u_bar = parts.pop("consensus")
        increment = _residual_increment(V.block(start, stop).tokens, u_bar.tokens, hp.step_r, variant)
        consensus.append(u_bar.tokens)
        traces.append(AttentionTrace(
            magnitudes=magnitudes, consensus=u_bar.tokens, increment=increment, block=block, **parts,
        ))

    if len(heads) == 1:
        z_plus, _ = tangent_residual_block(Z, V, ComplexSeq(consensus[0], Q.times), proj, hp.step_r, variant)
    else:
        # per-head tangent projections, one shared output map
        z_plus = Z + np.concatenate([t.increment for t in traces], axis=-1) @ proj.w_o
    return z_plus, normalize(z_plus), traces


def rt_rfa_forward(
    Z: ArrayLike,
    proj: ProjectionSet,
    params: RtSdeParams,
    hp: FilterHyperParams,
    variant: Variant = "tangent",
    times: Optional[ArrayLike] = None,
    causal: bool = True,
) -> tuple[NDArray[np.float64], NDArray[np.float64], AttentionTrace]:
    """Single-head RT-RFA over all d coordinates; returns (Z+, U+ = normalize(Z+), trace)."""
    z_plus, u_plus, traces = _forward(Z, proj, ((0, proj.dim),), (params,), hp, variant, times, causal)
    return z_plus, u_plus, traces[0]


def multihead_forward(
    Z: ArrayLike,
    proj: ProjectionSet,
    params: RtSdeParams | Sequence[RtSdeParams],
    hp: FilterHyperParams,
    variant: Variant = "tangent",
    times: Optional[ArrayLike] = None,
    causal: bool = True,
) -> tuple[NDArray[np.float64], NDArray[np.float64], list[AttentionTrace]]:
    """
    Block-diagonal heads over proj.heads. Each head uses its own parameters on
    its slice of the globally normalized Q, K, V, while the precision kernel
    sees the global value magnitudes. Per-head increments are concatenated
    before W_o.
    """
    head_params = [params] * len(proj.heads) if isinstance(params, RtSdeParams) else list(params)
    return _forward(Z, proj, proj.heads, head_params, hp, variant, times, causal)


def isotropic_rfa_forward(
    Z: ArrayLike,
    proj: ProjectionSet,
    iso: IsotropicParams,
    hp: FilterHyperParams,
    times: Optional[ArrayLike] = None,
    causal: bool = True,
) -> tuple[NDArray[np.float64], IsotropicTrace]:
    """
    Isotropic baseline: scalar lag kernel, decayed residuals, decay-weighted
    aggregation. Q, K, V are not normalized. Returns (V_bar W_o, trace).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != proj.n_model:
        raise DimensionMismatchError(f"input width {Z.shape[1]} does not match projections ({proj.n_model})")
    n = Z.shape[0]
    if n < 1:
        raise InvalidParameterError("attention needs at least one token")
    times = default_times(n) if times is None else np.asarray(times, dtype=np.float64)
    freqs = iso.freqs_for(proj.dim)
    q_t = rotate(Z @ proj.w_q, freqs, -times)
    k_t = rotate(Z @ proj.w_k, freqs, -times)
    v_t = rotate(Z @ proj.w_v, freqs, -times)

    lags = _lags(times)
    mask = _mask_for(n, None, causal)
    precision = 1.0 / np.asarray(isotropic_sigma2(iso, lags))
    decay = np.exp(-iso.mu * lags)
    _, penalty = _robust_residual(q_t, k_t, precision, hp, decay)
    logits = np.where(mask, np.log(precision) - penalty, -np.inf)
    weights = attention_weights(logits, hp.beta_s, mask)
    decayed = weights * decay
    output = rotate(decayed @ v_t, freqs, times)
    trace = IsotropicTrace(precision, decay, logits, weights, decayed, output)
    return output @ proj.w_o, trace
