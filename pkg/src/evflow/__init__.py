"""Variational optical flow on evolving graph surfaces."""
from .model import Grid3, load_field, read_evsf, save_field, write_evsf
from .geometry import GeometryAtlas, build_atlas
from .variational import RegParams, data_derivatives, el_coefficients, energy
from .assembly import SparseSystem, assemble
from .solver import SolveReport, SolverConfig, gmres

__all__ = [
    "Grid3", "load_field", "read_evsf", "save_field", "write_evsf",
    "GeometryAtlas", "build_atlas",
    "RegParams", "data_derivatives", "el_coefficients", "energy",
    "SparseSystem", "assemble",
    "SolveReport", "SolverConfig", "gmres",
]
__version__ = "0.1.0"
