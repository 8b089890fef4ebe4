"""Biased random walks on discrete cylinders: conditioned walks,
non-intersection exponents, coupling experiments and transfer operators."""

__version__ = "0.1.0"

from .cylinder import CylinderConfig, Site, first_passage_prob, neighbors, sample_step  # noqa: F401
from .errors import *  # noqa: F401,F403
