"""Skeletal density fields and geometric guidance wrenches for virtual assembly."""

from .affinity import (AffinityGrid, ComplexSpreadSample, KernelParams,
                       affinity_at, affinity_gradient_at, build_affinity_grid,
                       default_params, load_field, phi_kernel, phi_partials,
                       sample_grid, save_field, spacing_for_dims)
from .distance import (DistanceResult, distance_gradient, signed_distance,
                       unsigned_distance, winding_pmc)
from .energy import (PosePair, ScoreResult, StiffnessMatrix, SweepTable, Wrench,
                     analytic_gradient, energy, fdm_gradient, score, stiffness,
                     sweep_rotation, sweep_translation, wrench)
from .geometry import (AxisAngle, RigidTransform, TriMesh, ValidationReport,
                       compose, exp_rotation, validate_mesh)
from .scenes import PegHoleSpec, generate_pair, load_mesh, parse_scene_config, save_mesh
from .session import (CouplingParams, Session, SessionConfig, Trajectory,
                      run_trace)

__version__ = "0.1.0"
