"""
rtfilter: radial-tangential stochastic filtering on the unit sphere.

Simulation of the radial-tangential SDE, its closed-form propagated
covariance, the directional filter and IRLS step, and the attention and
transformer layers built from them.
"""

from .attention import (
    AttentionTrace,
    ComplexSeq,
    ProjectionSet,
    isotropic_rfa_forward,
    multihead_forward,
    rt_rfa_forward,
)
from .errors import (
    AntipodalError,
    ConfigError,
    DegenerateConsensusError,
    DimensionMismatchError,
    InvalidParameterError,
    NonUnitDirectionError,
    ReportError,
    RtFilterError,
)
from .filter import DirectionalEvidence, directional_mle, irls_step, slerp_update, tangent_project_update
from .kernel import FilterHyperParams, IsotropicParams, directional_precision, phi, sigma_v2
from .sde import RtSdeParams, Trajectory, monte_carlo_propagated_cov, simulate_cartesian, simulate_polar
from .spectral import RotationFreqs, normalize, project_radial, project_tangent, rope_schedule, rotate
from .transformer import BlockConfig, block_forward, stack_forward

__version__ = "0.1.0"

__all__ = [
    "AntipodalError",
    "AttentionTrace",
    "BlockConfig",
    "ComplexSeq",
    "ConfigError",
    "DegenerateConsensusError",
    "DimensionMismatchError",
    "DirectionalEvidence",
    "FilterHyperParams",
    "InvalidParameterError",
    "IsotropicParams",
    "NonUnitDirectionError",
    "ProjectionSet",
    "ReportError",
    "RotationFreqs",
    "RtFilterError",
    "RtSdeParams",
    "Trajectory",
    "block_forward",
    "directional_mle",
    "directional_precision",
    "irls_step",
    "isotropic_rfa_forward",
    "monte_carlo_propagated_cov",
    "multihead_forward",
    "normalize",
    "phi",
    "project_radial",
    "project_tangent",
    "rope_schedule",
    "rotate",
    "rt_rfa_forward",
    "sigma_v2",
    "simulate_cartesian",
    "simulate_polar",
    "slerp_update",
    "stack_forward",
    "tangent_project_update",
]
