"""Virtual fields identification for linear elasticity.

The test space is the full finite-element basis (equilibrium-gap flavor), so
the unknown state in the discrete weak form is replaced by the measured
displacements and the parameters follow from one small linear solve per load
step; multiple steps are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataCoverageError, IdentifiabilityError
from .materials import E_nu_from_c_coords
from .mesh_fem import DofPartition, Mesh, assemble_vfm_system
from .synthetic_data import ObservationSet


def full_field_vectors(
    mesh: Mesh, part: DofPartition, data: ObservationSet, experiment: int = 1, step: int = 1
) -> tuple[np.ndarray, float]:
    """Free-dof displacement vector and measured resultant for one load step.

    The measurement grid must coincide with the mesh nodes (point ids are
    node ids); prescribed dofs take their boundary values, so the data only
    needs to cover the free dofs.
    """
    full = np.full(mesh.n_dofs, np.nan)
    for comp, offset in (("u1", 0), ("u2", 1)):
        block = data.block(comp, experiment, step)
        full[2 * block.points + offset] = data.d[block.start:block.stop]
    d_u = full[part.free]
    if np.any(np.isnan(d_u)):
        missing = int(np.isnan(d_u).sum())
        raise DataCoverageError(
            f"displacement data misses {missing} free dofs (experiment {experiment}, "
            f"step {step})"
        )
    p_check = float(data.values("F1", experiment, step)[0])
    return d_u, p_check


@dataclass(eq=False)
class VfmResult:
    kappa_c: np.ndarray  # (C11, C12)
    E: float
    nu: float
    residual_norm: float
    per_step: tuple  # (experiment, step, kappa_c) triples


def solve_vfm(
    mesh: Mesh,
    part: DofPartition,
    data: ObservationSet,
    sigma_r: float = 1e4,
    m: np.ndarray | None = None,
) -> VfmResult:
    """Direct linear identification from measured displacements and resultant.

    Solves the 2x2 normal equations A^T A kappa = A^T p_vec of the
    overdetermined equilibrium system per load step and averages the
    estimates.  Raises IdentifiabilityError when the probed deformation
    modes leave the normal matrix rank deficient.
    """
    steps = sorted({(b.experiment, b.step) for b in data.blocks if b.comp == "u1"})
    if not steps:
        raise DataCoverageError("no displacement blocks in the observation set")
    estimates = []
    sq_residual = 0.0
    for exp, step in steps:
        d_u, p_check = full_field_vectors(mesh, part, data, exp, step)
        system = assemble_vfm_system(mesh, part, d_u, p_check, sigma_r, m=m)
        G = system.A.T @ system.A
        rhs = system.A.T @ system.p_vec
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e14:
            raise IdentifiabilityError(
                f"normal matrix is rank deficient (cond {cond:.2e}); the measured "
                f"deformation modes do not separate the parameters"
            )
        kappa = np.linalg.solve(G, rhs)
        estimates.append((exp, step, kappa))
        resid = system.A @ kappa - system.p_vec
        sq_residual += float(resid @ resid)
    kappa_mean = np.mean([k for _, _, k in estimates], axis=0)
    E, nu = E_nu_from_c_coords(*kappa_mean)
    return VfmResult(
        kappa_c=kappa_mean,
        E=E,
        nu=nu,
        residual_norm=float(np.sqrt(sq_residual)),
        per_step=tuple(estimates),
    )


def equilibrium_gap(
    mesh: Mesh,
    part: DofPartition,
    data: ObservationSet,
    kappa_c,
    sigma_r: float = 1e4,
    m: np.ndarray | None = None,
    experiment: int = 1,
    step: int = 1,
) -> float:
    """Half squared norm of the discrete equilibrium residual at the data.

    Evaluates the same weighted system the direct solve minimizes, at a given
    parameter vector (C11, C12).
    """
    d_u, p_check = full_field_vectors(mesh, part, data, experiment, step)
    system = assemble_vfm_system(mesh, part, d_u, p_check, sigma_r, m=m)
    resid = system.A @ np.asarray(kappa_c, dtype=float) - system.p_vec
    return 0.5 * float(resid @ resid)
