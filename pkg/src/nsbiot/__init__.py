"""Mixed finite element solver for Navier-Stokes flow coupled with Biot poroelasticity."""

__version__ = "0.1.0"

from .assembly import PhysicalParams, build_discretization
from .mesh import Mesh, build_interface_traces, build_structured_rect, load_mesh, mesh_size, save_mesh
from .system import NewtonConfig, SystemState, TimeStepper, set_initial_state

__all__ = [
    "Mesh", "NewtonConfig", "PhysicalParams", "SystemState", "TimeStepper", "build_discretization",
    "build_interface_traces", "build_structured_rect", "load_mesh", "mesh_size", "save_mesh",
    "set_initial_state", "__version__",
]
