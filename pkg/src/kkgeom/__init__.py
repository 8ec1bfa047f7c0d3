"""Kaluza-Klein geometry of principal bundles: Wong motion, bundle tension and Hopf fibrations."""

from . import geometry, hopf, liealg, models, tension, wong
from .errors import DomainError, InputError, NumericError
from .geometry import BaseChart, GaugePotential, KKLocalModel
from .hopf import HopfBundle, TwistedMap
from .liealg import AlgebraMetric, StructureConstants, abelian, su2
from .wong import WongState, integrate

__all__ = [
    "geometry", "hopf", "liealg", "models", "tension", "wong",
    "DomainError", "InputError", "NumericError",
    "BaseChart", "GaugePotential", "KKLocalModel",
    "HopfBundle", "TwistedMap",
    "AlgebraMetric", "StructureConstants", "abelian", "su2",
    "WongState", "integrate",
]
__version__ = "0.1.0"
