"""Noise budgets, simulation and fitting for amplified squeezed-light readout."""

from .core import (
    DecibelValue,
    DomainError,
    EfficiencyBudget,
    PhaseJitter,
    PumpDrive,
    QuadraturePair,
    from_db,
    squeezing_db,
    to_db,
)
from .chain import (
    ChainConfig,
    ReadoutPrediction,
    amplified_readout,
    amplified_shot_gain,
    direct_readout,
    effective_efficiency,
    internal_loss_pump,
    opo_output_variance,
)

__version__ = "0.1.0"
