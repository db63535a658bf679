"""Stacked RT-Transformer blocks and the cross-layer IRLS loss table."""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .attention import AttentionTrace, ProjectionSet, multihead_forward
from .errors import DimensionMismatchError, InvalidParameterError
from .kernel import FilterHyperParams
from .sde import RtSdeParams
from .spectral import normalize

logger = logging.getLogger(__name__)


class BlockConfig(BaseModel):
    """
    Wiring of one RT-Transformer block.

    variant "hybrid" is Z_out = Z+ + FFN(U+) as written for the RT block;
    "pre_norm" and "post_norm" are the classical alternatives.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    variant: Literal["hybrid", "pre_norm", "post_norm"] = "hybrid"
    residual: Literal["tangent", "additive"] = "tangent"
    ffn: Literal["zero", "identity", "mlp"] = "zero"
    width_mult: int = Field(4, ge=1)
    zero_init_output: bool = False
    gain: float = Field(0.1, ge=0)
    step_r: Optional[float] = Field(None, ge=0)
    layers: int = Field(1, ge=1)
    causal: bool = True

    def resolve_step_r(self, n_model: int) -> float:
        """Explicit step_r, else gain * sqrt(n_model)."""
        return self.step_r if self.step_r is not None else self.gain * math.sqrt(n_model)


def gelu(x: NDArray) -> NDArray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


@dataclass(frozen=True)
class FeedForward:
    """Two affine maps around a GELU; plumbing only, it is never fitted."""
    w1: NDArray[np.float64] = field(repr=False)
    b1: NDArray[np.float64] = field(repr=False)
    w2: NDArray[np.float64] = field(repr=False)
    b2: NDArray[np.float64] = field(repr=False)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return gelu(np.asarray(x) @ self.w1 + self.b1) @ self.w2 + self.b2

    @classmethod
    def init(cls, n_model: int, width_mult: int, rng: np.random.Generator, zero_output: bool = False) -> "FeedForward":
        hidden = width_mult * n_model
        w1 = rng.standard_normal((n_model, hidden)) / math.sqrt(n_model)
        w2 = np.zeros((hidden, n_model)) if zero_output else rng.standard_normal((hidden, n_model)) / math.sqrt(hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(n_model))


@dataclass(frozen=True)
class Layer:
    proj: ProjectionSet
    params: RtSdeParams | tuple[RtSdeParams, ...]
    ffn: Optional[FeedForward] = None


@dataclass(frozen=True)
class BlockTrace:
    """
    What one block saw and produced.
    - branch_input: the sequence the attention branch attended over.
    - attention: per-head attention traces.
    - z_plus, z_out: stream after the attention residual and after the FFN.
    - loss: (N,) directional NLL per query, summed over heads.
    - surrogate: (N,) the same evidence evaluated at the post-block directions.
    """
    stream_in: NDArray[np.float64] = field(repr=False)
    branch_input: NDArray[np.float64] = field(repr=False)
    attention: list[AttentionTrace] = field(repr=False)
    z_plus: NDArray[np.float64] = field(repr=False)
    z_out: NDArray[np.float64] = field(repr=False)
    loss: NDArray[np.float64] = field(repr=False)
    surrogate: NDArray[np.float64] = field(repr=False)


def _apply_ffn(cfg: BlockConfig, ffn: Optional[FeedForward], x: NDArray) -> NDArray:
    if cfg.ffn == "zero":
        return np.zeros_like(x)
    if cfg.ffn == "identity":
        return x
    if ffn is None:
        raise InvalidParameterError("block config asks for an mlp FFN but none was supplied")
    return ffn(x)


def block_forward(
    Z: ArrayLike,
    cfg: BlockConfig,
    proj: ProjectionSet,
    params: RtSdeParams | Sequence[RtSdeParams],
    hp: FilterHyperParams,
    ffn: Optional[FeedForward] = None,
    times: Optional[ArrayLike] = None,
) -> tuple[NDArray[np.float64], BlockTrace]:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != proj.n_model:
        raise DimensionMismatchError(f"stream width {Z.shape[1]} does not match projections ({proj.n_model})")
    hp_block = hp.model_copy(update={"step_r": cfg.resolve_step_r(proj.n_model)})
    branch_input = normalize(Z) if cfg.variant == "pre_norm" else Z
    z_branch, u_branch, heads = multihead_forward(branch_input, proj, params, hp_block, cfg.residual, times, cfg.causal)

    if cfg.variant == "hybrid":
        z_plus = z_branch
        z_out = z_plus + _apply_ffn(cfg, ffn, u_branch)
    elif cfg.variant == "pre_norm":
        z_plus = Z + np.concatenate([h.increment for h in heads], axis=-1) @ proj.w_o
        z_out = z_plus + _apply_ffn(cfg, ffn, normalize(z_plus))
    else:
        z_plus = normalize(z_branch)
        z_out = normalize(z_plus + _apply_ffn(cfg, ffn, z_plus))

    after = z_out @ proj.w_v
    loss = np.zeros(Z.shape[0])
    surrogate = np.zeros(Z.shape[0])
    for trace in heads:
        start, stop = trace.block
        loss = loss + trace.loss
        surrogate = surrogate + trace.surrogate(normalize(after[:, 2 * start:2 * stop]))
    return z_out, BlockTrace(Z, branch_input, heads, z_plus, z_out, loss, surrogate)


def stack_forward(
    Z: ArrayLike,
    cfg: BlockConfig,
    layers: Sequence[Layer],
    hp: FilterHyperParams,
    times: Optional[ArrayLike] = None,
) -> tuple[NDArray[np.float64], list[BlockTrace]]:
    """Run the blocks in order; each layer re-estimates from the stream the previous one left."""
    if len(layers) == 0:
        raise InvalidParameterError("a stack needs at least one layer")
    z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    traces = []
    for index, layer in enumerate(layers):
        z, trace = block_forward(z, cfg, layer.proj, layer.params, hp, layer.ffn, times)
        logger.debug("layer %d: median loss %.6g", index, float(np.median(trace.loss)))
        traces.append(trace)
    return z, traces


def shared_layers(layer: Layer, count: int) -> list[Layer]:
    """The same weights repeated, the IRLS setting."""
    return [layer] * count


def irls_trace(traces: Sequence[BlockTrace]) -> pd.DataFrame:
    """Long table with one row per (layer, query): loss, surrogate, and their difference."""
    frames = []
    for index, trace in enumerate(traces):
        frames.append(pd.DataFrame({
            "layer": index,
            "query": np.arange(trace.loss.shape[0]),
            "loss": trace.loss,
            "surrogate_after": trace.surrogate,
        }))
    table = pd.concat(frames, ignore_index=True)
    table["surrogate_change"] = table["surrogate_after"] - table["loss"]
    return table


def median_loss_by_layer(table: pd.DataFrame) -> pd.Series:
    return table.groupby("layer")["loss"].median()
