"""hybrid_flow package.

Lowest-order hybrid (cell + face) discretisation of variable-density
incompressible Navier-Stokes on polygonal meshes: upwind density transport,
skew-symmetric convection, convergence studies and invariant checks.

Entry point: `hybrid-flow` (console script).
"""

__all__ = [
    "mesh",
    "spaces",
    "operators",
    "convection",
    "assembly",
    "timestepper",
    "verify",
    "tool",
]
