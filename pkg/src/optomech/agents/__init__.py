from .baselines import BayesianController, RandomController, bayesian_action, lambda_grid
from .nets import Adam, Dense, LstmLayer, Mlp, RecurrentNet, Tanh
from .policy import GaussianPolicy
from .ppo import PpoAgent, RecurrentPpoAgent, gae_advantages

__all__ = [
    "Adam",
    "BayesianController",
    "Dense",
    "GaussianPolicy",
    "LstmLayer",
    "Mlp",
    "PpoAgent",
    "RandomController",
    "RecurrentNet",
    "RecurrentPpoAgent",
    "Tanh",
    "bayesian_action",
    "gae_advantages",
    "lambda_grid",
]
