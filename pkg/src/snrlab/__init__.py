"""Log-SNR channel schedules, score-matching losses, and likelihood bounds
for low-dimensional analytic test beds."""

from . import schedules, densities, dsm, proposals, network, evaluate, identities

__all__ = [
    "schedules",
    "densities",
    "dsm",
    "proposals",
    "network",
    "evaluate",
    "identities",
]

__version__ = "0.1.0"
