"""Multibody dynamics with per-subsystem implicit solves coupled by scalar constraint resolutions."""

from .bodies import (
    PointMassBlock,
    RigidBody,
    Subsystem,
    WorldState,
    advance_kinematic,
    assemble_subsystem_dynamics,
    box_inertia,
    capsule_inertia,
    fold_soft_constraints,
    integrate_state,
    sphere_inertia,
)
from .constraints import (
    ConstraintSpec,
    constraint_error_report,
    fischer_burmeister,
    local_solve_contact,
    local_solve_hard_equality,
    local_solve_hard_inequality,
    local_solve_soft,
    make_contact_error,
    project_friction_cone,
    tangent_basis,
)
from .solver import (
    UNCONSTRAINED,
    SolverAbort,
    SolverConfig,
    SolverState,
    StepReport,
    admm_iterate,
    compute_beta,
    extract_impulses,
    factor_subsystem,
    run_iterations,
    solve_step,
    subsystem_solve,
)
from .baselines import DelassusSystem, build_delassus, pgs_solve, pj_solve
from .collision import (
    BoxInterior,
    Capsule,
    ContactManifoldEntry,
    HalfSpace,
    Sphere,
    collide_capsule_halfspace,
    collide_sphere_box_interior,
    collide_sphere_halfspace,
    collide_sphere_sphere,
    collide_spheres,
    contact_jacobian,
    spatial_hash_pairs,
)
from .scenarios import (
    BUILTIN_SCENARIOS,
    Scenario,
    SchemaError,
    build_cable,
    build_split_lattice,
    build_sphere_drop,
    build_sphere_stack,
    build_stirring,
    from_dict,
    load_scenario,
    materialize,
    save_scenario,
    to_dict,
)
from .bench import (
    BenchRecord,
    StepMetrics,
    SweepResult,
    apply_overrides,
    run_scaling_sweep,
    run_simulation,
    step_once,
)

__version__ = "0.1.0"
