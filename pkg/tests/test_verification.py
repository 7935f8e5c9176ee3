"""Tests for error measures, studies, interface fluxes and the cavity demo."""
import numpy as np
import pytest

from brinkman2d.assembly import BoundaryData, GlobalLayout, assemble, \
    condense, solve
from brinkman2d.cases import CaseError, regime_blend, stokes_polynomial
from brinkman2d.localops import CoefficientField, SchemeConfig, \
    build_operator_sets
from brinkman2d.mesh import generate_cartesian, generate_polygonal
from brinkman2d.polyspace import element_quadrature
from brinkman2d.verification import (CavityProblem, ConvergenceTable,
                                     ErrorReport, VerificationError,
                                     convergence_study, energy_norm,
                                     energy_seminorms, error_report,
                                     faces_on_vertical_line, interface_flux,
                                     interpolate_global, pressure_l2_norm,
                                     project_pressure_global, solve_case)


def _setup(mesh, k, mu, nu):
    config = SchemeConfig(k=k)
    coeffs = CoefficientField.constant(mesh, mu, nu)
    ops = build_operator_sets(mesh, coeffs, config)
    layout = GlobalLayout(mesh, k)
    return config, coeffs, ops, layout


def _affine(pts):
    u = np.empty(pts.shape, dtype=pts.dtype)
    u[:, 0] = pts[:, 0] + 2.0 * pts[:, 1]
    u[:, 1] = 3.0 * pts[:, 0] - pts[:, 1]
    return u


def test_energy_norm_zero_vector():
    mesh = generate_cartesian(3)
    _, _, ops, layout = _setup(mesh, 1, 1.0, 1.0)
    assert energy_norm(mesh, ops, layout, np.zeros(layout.n_velocity)) == 0.0


@pytest.mark.parametrize("kind,n", [("cartesian", 3), ("agglomerated", 4)])
@pytest.mark.parametrize("k", [0, 1])
def test_energy_norm_exact_for_affine_interpolate(kind, n, k):
    # For w = (x + 2y, 3x - y): the gradient reconstruction of the
    # interpolate is the exact constant gradient and the Stokes
    # stabilisation vanishes, so the Stokes part is int |grad w|^2 = 15.
    # The Darcy part needs w in the degree-k cell space, so it equals
    # int |w|^2 = 10/3 - 1/2 + 5/3 = 9/2 only once k >= 1.
    if kind == "cartesian":
        mesh = generate_cartesian(n)
    else:
        mesh = generate_polygonal(n, kind)
    _, _, ops, layout = _setup(mesh, k, 1.0, 1.0)
    iu = interpolate_global(mesh, ops, layout, _affine)
    s_sq, d_sq = energy_seminorms(mesh, ops, layout, iu)
    assert abs(s_sq - 15.0) <= 1e-11 * 15.0
    if k >= 1:
        assert abs(d_sq - 4.5) <= 1e-11 * 4.5

    def const(pts):
        out = np.empty(pts.shape, dtype=pts.dtype)
        out[:, 0] = 1.0
        out[:, 1] = 2.0
        return out

    ic = interpolate_global(mesh, ops, layout, const)
    s_sq, d_sq = energy_seminorms(mesh, ops, layout, ic)
    assert s_sq <= 1e-11
    assert abs(d_sq - 5.0) <= 1e-11 * 5.0


def test_energy_norm_matches_assembled_velocity_block():
    # For a dof vector vanishing on boundary faces the squared energy norm
    # equals the quadratic form of the assembled velocity-velocity block,
    # an independent path through the global scatter.
    mesh = generate_polygonal(3, "perturbed-quad", seed=2)
    rng = np.random.default_rng(7)
    k = 1
    config, coeffs, ops, layout = _setup(mesh, k, 2.0, 3.0)
    system = assemble(mesh, coeffs, None, None, BoundaryData.homogeneous(),
                      config, ops=ops)
    dofmap = system.dofmap
    v = rng.standard_normal(layout.n_velocity)
    for face in mesh.boundary_faces():
        v[layout.face_slice(face.id)] = 0.0
    red = np.zeros(dofmap.n_total)
    for face in mesh.interior_faces():
        base = dofmap.face_base[face.id]
        red[base:base + dofmap.face_dim] = v[layout.face_slice(face.id)]
    for elem in mesh.elements:
        red[dofmap.elem_slice(elem.id)] = v[layout.elem_slice(elem.id)]
    quad_form = float(red @ (system.matrix @ red))
    full = energy_norm(mesh, ops, layout, v) ** 2
    assert abs(full - quad_form) <= 1e-12 * max(full, 1.0)


def test_energy_norm_joint_coefficient_scaling():
    # Doubling (mu, nu) together leaves the friction number, and hence the
    # stabilisation weights, unchanged; the squared norm doubles exactly.
    mesh = generate_cartesian(3)
    rng = np.random.default_rng(11)
    _, _, ops1, layout = _setup(mesh, 1, 2.0, 3.0)
    _, _, ops2, _ = _setup(mesh, 1, 4.0, 6.0)
    v = rng.standard_normal(layout.n_velocity)
    n1 = energy_norm(mesh, ops1, layout, v) ** 2
    n2 = energy_norm(mesh, ops2, layout, v) ** 2
    assert abs(n2 - 2.0 * n1) <= 1e-12 * n2
    s1, d1 = energy_seminorms(mesh, ops1, layout, v)
    assert abs(n1 - (s1 + d1)) <= 1e-12 * max(n1, 1.0)


def test_pressure_l2_norm_matches_continuous_norm():
    # pi^k of p = x + 2y is p itself for k >= 1, and the discrete norm of
    # the projection equals sqrt(int (x+2y)^2) = sqrt(8/3).
    mesh = generate_cartesian(3)
    _, _, ops, _ = _setup(mesh, 1, 1.0, 1.0)
    pp = project_pressure_global(mesh, ops, lambda pts: pts[:, 0]
                                 + 2.0 * pts[:, 1])
    assert abs(pressure_l2_norm(mesh, ops, pp) - np.sqrt(8.0 / 3.0)) <= 1e-12


class _FakeSolution:
    def __init__(self, velocity, pressure):
        self.velocity = velocity
        self.pressure = pressure
        self.multiplier = 0.0
        self.residual = 0.0
        self.n_solved = 0


def test_error_report_zero_for_exact_interpolate():
    mesh = generate_cartesian(4)
    case = regime_blend(cf_omega=1.0)
    config = SchemeConfig(k=1)
    coeffs = case.coefficient_field(mesh)
    ops = build_operator_sets(mesh, coeffs, config)
    layout = GlobalLayout(mesh, 1)
    iu = interpolate_global(mesh, ops, layout, case.u)
    pp = project_pressure_global(mesh, ops, case.p)
    rep = error_report(mesh, ops, layout, _FakeSolution(iu, pp), case)
    assert rep.error == 0.0
    assert rep.error_velocity == 0.0 and rep.error_pressure == 0.0
    assert rep.quotient_residual() <= 1e-12
    assert rep.denom_velocity > 0.0 and rep.denom_pressure > 0.0


def test_error_report_scales_linearly_with_perturbation():
    mesh = generate_cartesian(3)
    case = regime_blend(cf_omega=1.0)
    config = SchemeConfig(k=0)
    coeffs = case.coefficient_field(mesh)
    ops = build_operator_sets(mesh, coeffs, config)
    layout = GlobalLayout(mesh, 0)
    iu = interpolate_global(mesh, ops, layout, case.u)
    pp = project_pressure_global(mesh, ops, case.p)
    rng = np.random.default_rng(3)
    dv = rng.standard_normal(iu.shape)
    dp = rng.standard_normal(pp.shape)
    rep1 = error_report(mesh, ops, layout, _FakeSolution(iu + dv, pp + dp),
                        case)
    rep2 = error_report(mesh, ops, layout,
                        _FakeSolution(iu + 2.0 * dv, pp + 2.0 * dp), case)
    assert abs(rep2.error_velocity - 2.0 * rep1.error_velocity) \
        <= 1e-12 * rep2.error_velocity
    assert abs(rep2.error_pressure - 2.0 * rep1.error_pressure) \
        <= 1e-12 * rep2.error_pressure
    assert rep1.quotient_residual() <= 1e-12


def test_solve_case_reproduces_polynomial_solution():
    mesh = generate_polygonal(3, "agglomerated")
    case = stokes_polynomial(1)
    report, solution = solve_case(mesh, case, SchemeConfig(k=1))
    assert report.error <= 1e-9
    assert report.quotient_residual() <= 1e-12
    n_int = sum(1 for f in mesh.faces if not f.boundary)
    assert report.condensed_dofs == 4 * n_int + mesh.n_elements + 1
    assert solution.residual <= 1e-10


def _fabricated_reports(hs, errors):
    return [ErrorReport(h=h, n_elements=1, condensed_dofs=1, error=e,
                        error_velocity=e, error_pressure=0.0,
                        denom_velocity=1.0, denom_pressure=1.0,
                        time_assembly=0.0, time_solve=0.0)
            for h, e in zip(hs, errors)]


def test_convergence_table_rate_computation():
    hs = [0.5, 0.25, 0.125]
    reports = _fabricated_reports(hs, [h ** 2 for h in hs])
    table = ConvergenceTable("fabricated", 1, reports)
    assert table.rates[0] is None
    assert all(abs(r - 2.0) <= 1e-12 for r in table.rates[1:])
    assert abs(table.final_rate() - 2.0) <= 1e-12


def test_convergence_table_requires_refinement():
    reports = _fabricated_reports([0.25, 0.5], [0.1, 0.2])
    with pytest.raises(VerificationError, match="refine"):
        ConvergenceTable("fabricated", 0, reports)


def test_convergence_study_blend_rates():
    case = regime_blend(cf_omega=1.0)
    meshes = [generate_cartesian(n) for n in (4, 8, 16)]
    table = convergence_study(case, meshes, SchemeConfig(k=0))
    assert table.failure is None
    errs = [r.error for r in table.reports]
    assert errs[0] > errs[1] > errs[2]
    assert table.final_rate() >= 0.7


def test_convergence_study_worker_count_invariance():
    case = regime_blend(cf_omega=1.0)
    meshes = [generate_cartesian(n) for n in (4, 8)]
    t1 = convergence_study(case, meshes, SchemeConfig(k=1), workers=1)
    t2 = convergence_study(case, meshes, SchemeConfig(k=1), workers=2)
    for a, b in zip(t1.reports, t2.reports):
        assert a.error == b.error
        assert a.error_velocity == b.error_velocity
        assert a.error_pressure == b.error_pressure
        assert a.h == b.h and a.condensed_dofs == b.condensed_dofs
    assert t1.final_rate() == t2.final_rate()


class _FragileCase:
    """Delegates to a real case but refuses meshes beyond a cell budget."""

    def __init__(self, base, max_cells):
        self._base = base
        self._max = max_cells
        self.name = base.name
        self.u, self.p, self.f, self.g = base.u, base.p, base.f, base.g

    def is_pure_darcy(self, eps=1e-14):
        return self._base.is_pure_darcy(eps)

    def coefficient_field(self, mesh, eps=1e-14):
        if mesh.n_elements > self._max:
            raise CaseError("cell budget exceeded")
        return self._base.coefficient_field(mesh, eps=eps)

    def boundary_data(self, mesh, ops):
        return self._base.boundary_data(mesh, ops)


@pytest.mark.parametrize("workers", [1, 2])
def test_convergence_study_truncates_on_level_failure(workers):
    case = _FragileCase(regime_blend(cf_omega=1.0), max_cells=16)
    meshes = [generate_cartesian(n) for n in (4, 8, 16)]
    table = convergence_study(case, meshes, SchemeConfig(k=0),
                              workers=workers)
    assert len(table.reports) == 1
    assert table.failure is not None
    assert "cell budget exceeded" in table.failure


def test_convergence_study_needs_two_levels():
    case = regime_blend(cf_omega=1.0)
    with pytest.raises(VerificationError, match="two"):
        convergence_study(case, [generate_cartesian(4)], SchemeConfig(k=0))


def test_faces_on_vertical_line():
    mesh = generate_cartesian(4)
    mid = faces_on_vertical_line(mesh, 0.5)
    assert len(mid) == 4
    for fid in mid:
        pts = mesh.vertices[list(mesh.faces[fid].vertex_ids)]
        assert np.allclose(pts[:, 0], 0.5)
    banded = faces_on_vertical_line(mesh, 0.5, (0.25, 1.0))
    assert len(banded) == 3
    assert faces_on_vertical_line(mesh, 0.3) == []


def test_interface_flux_constant_and_linear_fields():
    mesh = generate_cartesian(4)
    k = 1
    _, _, ops, layout = _setup(mesh, k, 1.0, 1.0)
    line = faces_on_vertical_line(mesh, 0.5)

    v = np.zeros(layout.n_velocity)
    assert interface_flux(mesh, ops, layout, v, line, (1.0, 0.0)) == 0.0

    # Constant trace (1, 0): flux equals the interface length.
    for fid in line:
        half = layout.face_dim // 2
        block = np.zeros(layout.face_dim)
        eid = mesh.faces[fid].elements[0]
        i = mesh.elements[eid].face_ids.index(fid)
        op = ops[eid]
        Psi = op.face_bases[i].eval(op.face_quads[i].param)
        w = op.face_quads[i].weights
        M = Psi.T @ (Psi * w[:, None])
        block[:half] = np.linalg.solve(M, w @ Psi)
        v[layout.face_slice(fid)] = block
    assert abs(interface_flux(mesh, ops, layout, v, line, (1.0, 0.0)) - 1.0) \
        <= 1e-13

    # Interpolate of u = (x, -y): int_{x=1/2} u.n = 1/2.
    def u(pts):
        out = np.empty(pts.shape, dtype=pts.dtype)
        out[:, 0] = pts[:, 0]
        out[:, 1] = -pts[:, 1]
        return out

    iu = interpolate_global(mesh, ops, layout, u)
    assert abs(interface_flux(mesh, ops, layout, iu, line, (1.0, 0.0)) - 0.5) \
        <= 1e-12


def test_interface_flux_rejects_misaligned_faces():
    mesh = generate_cartesian(4)
    _, _, ops, layout = _setup(mesh, 0, 1.0, 1.0)
    horizontal = [f.id for f in mesh.faces
                  if abs(f.normal[1]) > 0.5][0]
    with pytest.raises(VerificationError, match="interface"):
        interface_flux(mesh, ops, layout, np.zeros(layout.n_velocity),
                       [horizontal], (1.0, 0.0))


def test_cavity_geometry_and_labels():
    problem = CavityProblem(4)
    mesh = problem.mesh
    assert mesh.n_elements == 96
    counts = np.bincount(problem.labels, minlength=3)
    assert counts.tolist() == [16, 10, 70]
    assert len(problem.interface_faces()) == 3
    coeffs = problem.coefficient_field()
    census = coeffs.census()
    assert census["stokes_dominated"] == 16
    assert census["darcy_dominated"] == 80


@pytest.mark.parametrize("bad", [0, 2, 5, 6])
def test_cavity_requires_multiple_of_four(bad):
    with pytest.raises(VerificationError, match="multiple of 4"):
        CavityProblem(bad)


def test_cavity_lid_data_hits_only_lid_faces():
    problem = CavityProblem(4)
    config = SchemeConfig(k=0)
    ops = build_operator_sets(problem.mesh, problem.coefficient_field(),
                              config)
    bd = problem.boundary_data(ops)
    assert len(bd.values) == 4
    for fid in bd.values:
        pts = problem.mesh.vertices[list(problem.mesh.faces[fid].vertex_ids)]
        assert np.allclose(pts[:, 1], 1.0)
        assert pts[:, 0].min() >= -1e-12 and pts[:, 0].max() <= 1 + 1e-12


def test_cavity_zero_data_gives_zero_flux():
    problem = CavityProblem(4)
    config = SchemeConfig(k=0)
    coeffs = problem.coefficient_field()
    ops = build_operator_sets(problem.mesh, coeffs, config)
    system = assemble(problem.mesh, coeffs, None, None,
                      BoundaryData.homogeneous(), config, ops=ops)
    solution = solve(condense(system))
    flux = interface_flux(problem.mesh, ops, system.layout,
                          solution.velocity, problem.interface_faces(),
                          (1.0, 0.0))
    assert flux == 0.0
    assert problem.far_velocity(ops, system.layout, solution) == 0.0


def test_cavity_solve_drives_flow_into_wedge():
    problem = CavityProblem(4)
    flux, solution, ops, layout, info = problem.solve(SchemeConfig(k=0))
    assert np.isfinite(flux) and flux > 0.0
    # Flow should not leak into the deep porous region below the cavity.
    assert info["far_velocity"] <= 1e-2 * 0.25
    assert info["n_elements"] == 96
    assert info["condensed_dofs"] == solution.n_solved
    assert solution.residual <= 1e-10


def test_interpolate_global_matches_projection_on_faces():
    # Face blocks of the interpolate are L2 projections of the trace; check
    # against an independent quadrature computation on a curved-family mesh.
    mesh = generate_polygonal(3, "perturbed-quad", seed=5)
    k = 2
    _, _, ops, layout = _setup(mesh, k, 1.0, 1.0)

    def u(pts):
        out = np.empty(pts.shape, dtype=pts.dtype)
        out[:, 0] = np.sin(pts[:, 0] + 2.0 * pts[:, 1])
        out[:, 1] = pts[:, 0] * pts[:, 1]
        return out

    iu = interpolate_global(mesh, ops, layout, u)
    elem = mesh.elements[0]
    op = ops[elem.id]
    quad = element_quadrature(mesh, elem, 2 * k + 6)
    V = op.basis_k.eval(quad.points)
    M = V.T @ (V * quad.weights[:, None])
    vals = u(quad.points)
    eb = iu[layout.elem_slice(elem.id)]
    nk = op.layout.n_scalar
    for c in range(2):
        moments = V.T @ (quad.weights * vals[:, c])
        expect = np.linalg.solve(M, moments)
        got = eb[c * nk:(c + 1) * nk]
        assert np.max(np.abs(got - expect)) <= 1e-12
