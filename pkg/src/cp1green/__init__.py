"""Weighted omega-pluricomplex Green functions on the Riemann sphere."""
from .core import GridField, OmegaSpec, ProjPoint, SphereGrid
from .envelope_relax import EnvelopeResult, SolverOptions, solve_envelope
from .envelope_sections import SectionEnvelope, build_section_envelope, oracle_phi_n
from .exceptions import (CP1GreenError, ConfigurationError, DomainError, InvalidGaugeError,
                         InvalidWeightError, PreconditionError, RootFindingError, SolverError)
from .pullback import RationalMap, SandwichParams
from .weights import CompactSet, Weight, parse_set, parse_weight

__version__ = "0.1.0"

__all__ = [
    "GridField", "OmegaSpec", "ProjPoint", "SphereGrid", "EnvelopeResult", "SolverOptions",
    "solve_envelope", "SectionEnvelope", "build_section_envelope", "oracle_phi_n",
    "RationalMap", "SandwichParams", "CompactSet", "Weight", "parse_set", "parse_weight",
    "CP1GreenError", "ConfigurationError", "DomainError", "InvalidGaugeError",
    "InvalidWeightError", "PreconditionError", "RootFindingError", "SolverError",
]
