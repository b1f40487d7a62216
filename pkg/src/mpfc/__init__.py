"""Pseudo-spectral simulation and verification tools for the modified phase-field crystal equation."""
from .model import Params
from .spectral import Grid
from .integrators import MeanLaw, SchemeConfig, State, run, step_mpfc, step_pfc

__all__ = ["Grid", "Params", "State", "SchemeConfig", "MeanLaw", "run", "step_mpfc", "step_pfc"]
__version__ = "0.1.0"
