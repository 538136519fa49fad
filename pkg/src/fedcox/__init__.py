"""Federated Cox proportional hazards with feature-presence clustering."""
from fedcox._backend import BACKEND

__version__ = "0.1.0"

