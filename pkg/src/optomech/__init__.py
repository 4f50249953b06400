"""Measurement-based feedback control workbench for optomechanical entanglement."""

__version__ = "0.1.0"

from optomech.config import ExperimentConfig, config_hash, load_config, save_config
from optomech.envs import LinearEnvConfig, NonlinearEnvConfig, make_vector_env
from optomech.fock import FockSpace
from optomech.runner import evaluate, export_plot_data, sweep, train, two_phase

__all__ = [
    "ExperimentConfig",
    "FockSpace",
    "LinearEnvConfig",
    "NonlinearEnvConfig",
    "__version__",
    "config_hash",
    "evaluate",
    "export_plot_data",
    "load_config",
    "make_vector_env",
    "save_config",
    "sweep",
    "train",
    "two_phase",
]
