"""Gradient-free diffusion steering toolkit.

Thin re-export of the compiled ``_diffsteer`` extension. Matrices are numpy
arrays of float64 with samples in rows.
"""

from . import _diffsteer
from ._diffsteer import *  # noqa: F401,F403
from ._diffsteer import io  # noqa: F401

__version__ = _diffsteer.__version__


def two_gaussian_setup(separation=4.0, stddev=0.5, n=2048, seed=1):
    """Data and labels from the symmetric two-class toy mixture."""
    mixture = _diffsteer.symmetric_two_gaussians(separation, stddev)
    ds = mixture.sample(n, seed)
    return mixture, ds.data, ds.labels
