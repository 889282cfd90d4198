"""Tests for the Q4 plane-stress core: elements, assembly, solves, linear maps."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from calibrix.errors import ConfigError, DataCoverageError, GeometryError, SolverError
from calibrix.materials import ElasticParams, c_coords_from_E_nu, elasticity_matrix_plane_stress
from calibrix.mesh_fem import (
    DofPartition,
    Mesh,
    StiffnessDecomposition,
    applied_forces,
    assemble_aao_matrices,
    assemble_parameter_matrices,
    assemble_stiffness,
    assemble_vfm_system,
    default_resultant_selector,
    element_stiffness,
    element_stiffness_from_coords,
    prescribed_values,
    reaction_resultant,
    read_mesh_file,
    solve_linear,
    write_mesh_file,
    zero_force_rows,
)
from calibrix.meshes import quarter_plate_mesh, rectangle_mesh, uniaxial_patch_mesh

C_STEEL = elasticity_matrix_plane_stress(ElasticParams(E=210000.0, nu=0.3))
KAPPA_STEEL = np.array(c_coords_from_E_nu(210000.0, 0.3))

# Unit-square Q4 stiffness for E = 210000, nu = 0.3, t = 1, derived by exact
# symbolic integration of B^T C B (independent of the quadrature code path).
K_UNIT_SQUARE_ORACLE = np.array([
    [103846.1538461538, 37500.0, -63461.5384615385, -2884.6153846154,
     -51923.0769230769, -37500.0, 11538.4615384615, 2884.6153846154],
    [37500.0, 103846.1538461538, 2884.6153846154, 11538.4615384615,
     -37500.0, -51923.0769230769, -2884.6153846154, -63461.5384615385],
    [-63461.5384615385, 2884.6153846154, 103846.1538461538, -37500.0,
     11538.4615384615, -2884.6153846154, -51923.0769230769, 37500.0],
    [-2884.6153846154, 11538.4615384615, -37500.0, 103846.1538461538,
     2884.6153846154, -63461.5384615385, 37500.0, -51923.0769230769],
    [-51923.0769230769, -37500.0, 11538.4615384615, 2884.6153846154,
     103846.1538461538, 37500.0, -63461.5384615385, -2884.6153846154],
    [-37500.0, -51923.0769230769, -2884.6153846154, -63461.5384615385,
     37500.0, 103846.1538461538, 2884.6153846154, 11538.4615384615],
    [11538.4615384615, -2884.6153846154, -51923.0769230769, 37500.0,
     -63461.5384615385, 2884.6153846154, 103846.1538461538, -37500.0],
    [2884.6153846154, -63461.5384615385, 37500.0, -51923.0769230769,
     -2884.6153846154, 11538.4615384615, -37500.0, 103846.1538461538],
])

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@pytest.fixture(scope="module")
def plate():
    mesh = quarter_plate_mesh(12, 10)
    part = DofPartition.from_mesh(mesh)
    return mesh, part


@pytest.fixture(scope="module")
def plate_solution(plate):
    mesh, part = plate
    stiff = assemble_stiffness(mesh, part, C_STEEL)
    pbar = applied_forces(mesh, part)
    ubar = prescribed_values(mesh, part)
    u, p = solve_linear(stiff, pbar, ubar)
    return stiff, pbar, ubar, u, p


class TestElementStiffness:
    def test_rigid_translations_produce_no_force(self):
        C = elasticity_matrix_plane_stress(ElasticParams(E=1.0, nu=0.0))
        k = element_stiffness_from_coords(UNIT_SQUARE, C, 1.0)
        tx = np.tile([1.0, 0.0], 4)
        ty = np.tile([0.0, 1.0], 4)
        assert_allclose(k @ tx, 0.0, atol=1e-14)
        assert_allclose(k @ ty, 0.0, atol=1e-14)

    def test_linearity_in_C(self):
        k1 = element_stiffness_from_coords(UNIT_SQUARE, C_STEEL, 1.0)
        k2 = element_stiffness_from_coords(UNIT_SQUARE, 2.0 * C_STEEL, 1.0)
        assert_allclose(k2, 2.0 * k1, rtol=1e-14)

    def test_unit_square_matches_symbolic_oracle(self):
        k = element_stiffness_from_coords(UNIT_SQUARE, C_STEEL, 1.0)
        assert_allclose(k, K_UNIT_SQUARE_ORACLE, rtol=1e-10)

    def test_symmetry_and_rank(self):
        k = element_stiffness_from_coords(UNIT_SQUARE, C_STEEL, 1.0)
        assert_allclose(k, k.T, atol=1e-9)
        eigs = np.sort(np.abs(np.linalg.eigvalsh(k)))
        assert np.all(eigs[:3] < 1e-8 * eigs[-1])  # three rigid modes
        assert np.all(eigs[3:] > 1e-8 * eigs[-1])  # rank 5

    def test_degenerate_element_error(self):
        bowtie = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        with pytest.raises(GeometryError, match="element 7"):
            element_stiffness_from_coords(bowtie, C_STEEL, 1.0, label="element 7")
        with pytest.raises(GeometryError):
            Mesh(nodes=bowtie, elements=[[0, 1, 2, 3]], thickness=1.0)

    def test_mesh_indexed_element(self, plate):
        mesh, _ = plate
        k = element_stiffness(mesh, 3, C_STEEL)
        assert k.shape == (8, 8)
        assert_allclose(k, k.T, atol=1e-6)


class TestAssembly:
    def test_single_element_free_block(self):
        mesh = Mesh(nodes=UNIT_SQUARE, elements=[[0, 1, 2, 3]], thickness=1.0,
                    dirichlet=((0, 0, 0.0), (0, 1, 0.0), (3, 0, 0.0)))
        part = DofPartition.from_mesh(mesh)
        stiff = assemble_stiffness(mesh, part, C_STEEL)
        k = element_stiffness(mesh, 0, C_STEEL)
        assert_allclose(stiff.K.toarray(), k[np.ix_(part.free, part.free)], rtol=1e-14)

    def test_two_elements_share_edge_contributions(self):
        mesh = rectangle_mesh(2, 1, 2.0, 1.0)
        part = DofPartition.from_mesh(mesh)
        stiff = assemble_stiffness(mesh, part, C_STEEL)
        k0 = element_stiffness(mesh, 0, C_STEEL)
        k1 = element_stiffness(mesh, 1, C_STEEL)
        # Node 1 (dof 2) is shared: global diagonal = sum of both elements.
        d0 = list(2 * mesh.elements[0]).index(2)
        d1 = list(2 * mesh.elements[1]).index(2)
        full = stiff.full()
        # With no dirichlet dofs the free block is the global matrix.
        assert_allclose(full[2, 2], k0[d0, d0] + k1[d1, d1], rtol=1e-13)

    def test_full_matrix_symmetry(self, plate_solution):
        stiff = plate_solution[0]
        full = stiff.full()
        assert np.abs(full - full.T).max() <= 1e-12 * np.abs(full).max()

    def test_solved_state_satisfies_equilibrium(self, plate_solution):
        stiff, pbar, ubar, u, _ = plate_solution
        resid = stiff.K @ u + stiff.Kbar @ ubar - pbar
        assert np.linalg.norm(resid) <= 1e-9 * np.linalg.norm(pbar)


class TestSolveLinear:
    def test_homogeneous(self, plate_solution):
        stiff = plate_solution[0]
        u, p = solve_linear(stiff, np.zeros(stiff.K.shape[0]),
                            np.zeros(stiff.Kbar.shape[1]))
        assert_allclose(u, 0.0, atol=1e-15)
        assert_allclose(p, 0.0, atol=1e-15)

    def test_uniaxial_patch(self):
        mesh = uniaxial_patch_mesh(5, 4, 2.0, 1.0, traction=100.0, distort=0.3, seed=2)
        part = DofPartition.from_mesh(mesh)
        stiff = assemble_stiffness(mesh, part, C_STEEL)
        u, _ = solve_linear(stiff, applied_forces(mesh, part), prescribed_values(mesh, part))
        full = part.merge(u, prescribed_values(mesh, part))
        eps = 100.0 / 210000.0
        assert np.abs(full[0::2] - eps * mesh.nodes[:, 0]).max() < 1e-10
        assert np.abs(full[1::2] + 0.3 * eps * mesh.nodes[:, 1]).max() < 1e-10

    def test_plate_reaction_resultant(self, plate, plate_solution):
        mesh, part = plate
        _, pbar, _, _, p = plate_solution
        m = default_resultant_selector(mesh, part)
        assert abs(reaction_resultant(p, m) + 1500.0) < 1e-6
        # Global equilibrium: reactions balance the applied load.
        assert abs(p.sum() + pbar.sum()) <= 1e-8 * 1500.0

    def test_singular_system_raises(self):
        mesh = rectangle_mesh(2, 2, 1.0, 1.0)  # no supports at all
        part = DofPartition.from_mesh(mesh)
        stiff = assemble_stiffness(mesh, part, C_STEEL)
        with pytest.raises(SolverError, match="condition estimate"):
            solve_linear(stiff, np.ones(part.n_free), np.zeros(0))

    def test_energy_monotone_under_refinement(self):
        # Compliance of the displacement solution grows toward the continuum
        # limit under uniform refinement.
        energies = []
        for n_c, n_r in ((6, 5), (12, 10), (24, 20)):
            mesh = quarter_plate_mesh(n_c, n_r)
            part = DofPartition.from_mesh(mesh)
            stiff = assemble_stiffness(mesh, part, C_STEEL)
            pbar = applied_forces(mesh, part)
            u, _ = solve_linear(stiff, pbar, prescribed_values(mesh, part))
            energies.append(0.5 * float(pbar @ u))
        assert energies[0] < energies[1] < energies[2]


class TestReactionResultant:
    def test_zero_selector(self, plate_solution):
        p = plate_solution[4]
        assert reaction_resultant(p, np.zeros_like(p)) == 0.0

    def test_single_entry(self, plate_solution):
        p = plate_solution[4]
        m = np.zeros_like(p)
        m[3] = 1.0
        assert reaction_resultant(p, m) == p[3]

    def test_length_mismatch(self, plate_solution):
        p = plate_solution[4]
        with pytest.raises(DataCoverageError):
            reaction_resultant(p, np.ones(len(p) + 1))


class TestParameterMatrices:
    def test_zero_displacements(self, plate):
        mesh, part = plate
        a_s, abar_s = assemble_parameter_matrices(
            mesh, part, np.zeros(part.n_free), np.zeros(part.n_prescribed)
        )
        assert_allclose(a_s, 0.0, atol=1e-15)
        assert_allclose(abar_s, 0.0, atol=1e-15)

    def test_homogeneity(self, plate, plate_solution):
        mesh, part = plate
        _, _, ubar, u, _ = plate_solution
        a1, _ = assemble_parameter_matrices(mesh, part, u, ubar)
        a2, _ = assemble_parameter_matrices(mesh, part, 2.0 * u, 2.0 * ubar)
        assert_allclose(a2, 2.0 * a1, rtol=1e-13)

    def test_consistency_with_solve(self, plate, plate_solution):
        mesh, part = plate
        _, pbar, ubar, u, _ = plate_solution
        a_s, _ = assemble_parameter_matrices(mesh, part, u, ubar)
        assert np.linalg.norm(a_s @ KAPPA_STEEL - pbar) <= 1e-8 * np.linalg.norm(pbar)

    def test_random_linearity_identity(self, plate):
        # A_S(u, ubar) kappa == K(kappa) u + Kbar(kappa) ubar for random states.
        mesh, part = plate
        rng = np.random.default_rng(5)
        for _ in range(100):
            u = rng.normal(size=part.n_free)
            ubar = rng.normal(size=part.n_prescribed)
            kappa = rng.uniform(1e4, 3e5, size=2)
            kappa[1] = min(kappa[1], 0.45 * kappa[0])
            C = np.array([[kappa[0], kappa[1], 0.0],
                          [kappa[1], kappa[0], 0.0],
                          [0.0, 0.0, 0.5 * (kappa[0] - kappa[1])]])
            stiff = assemble_stiffness(mesh, part, C)
            a_s, abar_s = assemble_parameter_matrices(mesh, part, u, ubar)
            lhs = a_s @ kappa
            rhs = stiff.K @ u + stiff.Kbar @ ubar
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)
            lhs2 = abar_s @ kappa
            rhs2 = stiff.Kbar.T @ u + stiff.Kbarbar @ ubar
            assert np.linalg.norm(lhs2 - rhs2) <= 1e-10 * np.linalg.norm(rhs2)

    def test_decomposition_matches_direct_assembly(self, plate, plate_solution):
        mesh, part = plate
        _, _, ubar, u, _ = plate_solution
        decomp = StiffnessDecomposition.from_mesh(mesh, part)
        stiff = decomp.stiffness(KAPPA_STEEL)
        direct = assemble_stiffness(mesh, part, C_STEEL)
        assert np.abs((stiff.K - direct.K)).max() <= 1e-9
        a_s, abar_s = assemble_parameter_matrices(mesh, part, u, ubar)
        a_s2, abar_s2 = decomp.a_matrices(u, ubar)
        assert_allclose(a_s2, a_s, rtol=1e-9, atol=1e-12)
        assert_allclose(abar_s2, abar_s, rtol=1e-9, atol=1e-12)


class TestVfmSystem:
    def test_exact_data_zero_residual(self, plate, plate_solution):
        mesh, part = plate
        _, _, _, u, p = plate_solution
        m = default_resultant_selector(mesh, part)
        system = assemble_vfm_system(mesh, part, u, reaction_resultant(p, m), 1.0)
        resid = system.A @ KAPPA_STEEL - system.p_vec
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(system.A @ KAPPA_STEEL)

    def test_sigma_r_scales_only_resultant_row(self, plate, plate_solution):
        mesh, part = plate
        _, _, _, u, p = plate_solution
        p_check = reaction_resultant(p, default_resultant_selector(mesh, part))
        s1 = assemble_vfm_system(mesh, part, u, p_check, 1.0)
        s4 = assemble_vfm_system(mesh, part, u, p_check, 4.0)
        assert_allclose(s4.A[:-1], s1.A[:-1], rtol=1e-14)
        assert_allclose(s4.A[-1], 2.0 * s1.A[-1], rtol=1e-14)
        assert_allclose(s4.p_vec[-1], 2.0 * s1.p_vec[-1], rtol=1e-14)

    def test_missing_data_raises(self, plate):
        mesh, part = plate
        with pytest.raises(DataCoverageError):
            assemble_vfm_system(mesh, part, np.zeros(part.n_free - 1), 0.0, 1.0)
        bad = np.zeros(part.n_free)
        bad[0] = np.nan
        with pytest.raises(DataCoverageError):
            assemble_vfm_system(mesh, part, bad, 0.0, 1.0)


class TestAaoMatrices:
    def test_exact_solution_residual(self, plate, plate_solution):
        mesh, part = plate
        _, _, ubar, u, p = plate_solution
        p_check = reaction_resultant(p, default_resultant_selector(mesh, part))
        K_fr, Kbar_fr, p_vec = assemble_aao_matrices(
            mesh, part, KAPPA_STEEL, p_check, 1e4
        )
        resid = K_fr @ u + Kbar_fr @ ubar - p_vec
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(p_vec)

    def test_linearity_in_kappa(self, plate):
        mesh, part = plate
        K_fr, Kbar_fr, _ = assemble_aao_matrices(mesh, part, np.zeros(2), 0.0, 1.0)
        assert K_fr.nnz == 0 or np.abs(K_fr.data).max() == 0.0
        assert Kbar_fr.nnz == 0 or np.abs(Kbar_fr.data).max() == 0.0

    def test_row_partition_sizes(self, plate):
        mesh, part = plate
        K_fr, _, p_vec = assemble_aao_matrices(mesh, part, KAPPA_STEEL, -1500.0, 1e4)
        n_zero = len(zero_force_rows(mesh, part))
        assert K_fr.shape == (n_zero + 1, part.n_free)
        assert p_vec.shape == (n_zero + 1,)
        assert np.all(p_vec[:-1] == 0.0)

    def test_consistency_with_vfm_matrix(self, plate, plate_solution):
        # A(u, ubar) kappa == K_fr(kappa) u + Kbar_fr(kappa) ubar
        mesh, part = plate
        _, _, ubar, u, p = plate_solution
        p_check = reaction_resultant(p, default_resultant_selector(mesh, part))
        system = assemble_vfm_system(mesh, part, u, p_check, 1e4)
        K_fr, Kbar_fr, _ = assemble_aao_matrices(mesh, part, KAPPA_STEEL, p_check, 1e4)
        assert_allclose(system.A @ KAPPA_STEEL, K_fr @ u + Kbar_fr @ ubar,
                        rtol=1e-9, atol=1e-9)


class TestMeshFile:
    def test_round_trip(self, tmp_path, plate):
        mesh, _ = plate
        path = tmp_path / "plate.mesh"
        write_mesh_file(path, mesh)
        loaded = read_mesh_file(path)
        assert_allclose(loaded.nodes, mesh.nodes, rtol=0, atol=0)
        assert np.array_equal(loaded.elements, mesh.elements)
        assert loaded.thickness == mesh.thickness
        assert loaded.dirichlet == mesh.dirichlet
        assert loaded.neumann == mesh.neumann

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("thickness 1.0\nnode 1 0 0\nwobble 3\n")
        with pytest.raises(ConfigError, match="wobble"):
            read_mesh_file(path)

    def test_non_contiguous_ids(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("thickness 1.0\nnode 1 0 0\nnode 3 1 0\n")
        with pytest.raises(ConfigError, match="contiguous"):
            read_mesh_file(path)


class TestGenerators:
    def test_quarter_plate_load_sums(self, plate):
        mesh, part = plate
        assert abs(applied_forces(mesh, part).sum() - 1500.0) < 1e-9

    def test_quarter_plate_corner_rule(self):
        with pytest.raises(GeometryError, match="corner"):
            quarter_plate_mesh(7, 5)

    def test_partition_coverage_violation(self):
        with pytest.raises(GeometryError):
            DofPartition(free=np.array([0, 1]), prescribed=np.array([1, 2]))

    def test_bc_overlap_rejected(self):
        with pytest.raises(GeometryError, match="both"):
            Mesh(nodes=UNIT_SQUARE, elements=[[0, 1, 2, 3]], thickness=1.0,
                 dirichlet=((0, 0, 0.0),), neumann=((0, 0, 1.0),))
