"""Boundary-element electrostatics for high-voltage geometries.

Surface charge densities on curved triangular meshes by collocation,
electric fields anywhere in space, field-line tracing and the
streamer-inception breakdown check.
"""

from .mesh import (
    EPS0,
    CurvedTriangle,
    DielectricJump,
    Dirichlet,
    FloatingDirichlet,
    MeshError,
    PatchSpec,
    SurfaceMesh,
    Vertex,
    classify_vertex,
    load_mesh,
    map_reference,
    parse_mesh,
    save_mesh,
    surface_frame,
)
from .quadrature import (
    PairClass,
    QuadConfig,
    Rule,
    classify_pair,
    closest_point,
    duffy_rule,
    near_singular_rule,
    regular_rule,
    subdivide_at,
)
from .kernels import SingularEvaluation, adl_kernel, efield_kernel, sl_kernel
from .assembly import (
    AssemblyError,
    Neutrality,
    SystemMatrix,
    assemble,
    charge_row,
    load_matrix,
    matvec,
    partition_rows,
    save_matrix,
)
from .solver import Solution, SolverConfig, SolverError, residual, solve
from .postprocess import (
    FieldLine,
    IonizationModel,
    TraceError,
    TraceParams,
    eval_efield,
    eval_potential,
    load_ionization_model,
    pick_start_points,
    streamer_integral,
    surface_field_magnitudes,
    trace_fieldline,
)
from .config import Config

__version__ = "0.1.0"
