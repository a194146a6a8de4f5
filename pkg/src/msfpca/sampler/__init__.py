"""Gradient-based Hamiltonian MCMC with warmup adaptation."""

from .convergence import ess, rhat
from .core import ChainConfig, Draws, chain_seeds, run, run_chain
from .storage import load_draws, read_header, save_draws, write_draws_csv

__all__ = [
    "ChainConfig",
    "Draws",
    "chain_seeds",
    "ess",
    "load_draws",
    "read_header",
    "rhat",
    "run",
    "run_chain",
    "save_draws",
    "write_draws_csv",
]
