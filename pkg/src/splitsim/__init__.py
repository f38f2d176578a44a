"""Desk-scale sequential split learning with server-side checkpoint screening.

The package simulates a U-shaped split deployment (clients own head and
tail, the server owns the backbone), a roster of data-poisoning attacker
behaviors, and a server defense that scores recent backbone checkpoints by
low-frequency update signatures and angular drift, rolling back to the
newest checkpoint both scores agree is benign.
"""

from .config import ExperimentConfig, config_from_dict
from .errors import ConfigError, IdxFormatError, InputError

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "IdxFormatError",
    "InputError",
    "config_from_dict",
]

__version__ = "0.1.0"
