"""Magnetically driven rigid swimmers in Stokes flow under a rotating field."""

from .analysis import *  # noqa: F401,F403
from .asymptotics import *  # noqa: F401,F403
from .dynamics import *  # noqa: F401,F403
from .integrator import *  # noqa: F401,F403
from .model import *  # noqa: F401,F403
from .orbits import *  # noqa: F401,F403
from . import analysis, asymptotics, dynamics, integrator, model, orbits

__version__ = "0.1.0"

__all__ = (
    analysis.__all__ + asymptotics.__all__ + dynamics.__all__ + integrator.__all__
    + model.__all__ + orbits.__all__ + ["__version__"]
)
