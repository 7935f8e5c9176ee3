import numpy as np
import pytest

from brinkman2d import mesh as bmesh
from brinkman2d import polyspace as ps

from conftest import (polygon_monomial_integral, segment_monomial_integral,
                      triangle_monomial_integral)


def test_triangle_rule_reference():
    # Exact integrals over the unit simplex: x^p y^q -> p! q! / (p+q+2)!
    from math import factorial
    for deg in range(0, 12):
        rule = ps.triangle_rule(deg)
        assert np.all(rule.weights > 0)
        assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
        for p in range(deg + 1):
            for q in range(deg + 1 - p):
                val = np.sum(rule.weights * rule.points[:, 0]**p
                             * rule.points[:, 1]**q)
                exact = factorial(p) * factorial(q) / factorial(p + q + 2)
                assert val == pytest.approx(exact, rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("degree", [1, 3, 5, 7, 9, 11])
def test_element_quadrature_vs_fan_oracle(degree, mixed_cells):
    # Sample a handful of cells from each family.
    for mesh, elem in mixed_cells[::7]:
        quad = ps.element_quadrature(mesh, elem, degree)
        assert np.all(quad.weights > 0)
        coords = mesh.element_coords(elem)
        for p in range(degree + 1):
            for q in range(degree + 1 - p):
                got = np.sum(quad.weights * quad.points[:, 0]**p
                             * quad.points[:, 1]**q)
                exact = polygon_monomial_integral(coords, elem.star_point, p, q)
                assert got == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_element_quadrature_area(mixed_cells):
    for mesh, elem in mixed_cells:
        quad = ps.element_quadrature(mesh, elem, 2)
        assert quad.weights.sum() == pytest.approx(elem.area, rel=1e-13)


@pytest.mark.parametrize("degree", [0, 2, 5, 8])
def test_face_quadrature_vs_segment_oracle(degree):
    mesh = bmesh.generate_polygonal(3, "perturbed-quad", seed=2)
    for face in mesh.faces[::5]:
        quad = ps.face_quadrature(mesh, face, degree)
        assert np.all(quad.weights > 0)
        assert quad.weights.sum() == pytest.approx(face.measure, rel=1e-14)
        lo, hi = face.vertex_ids
        p0, p1 = mesh.vertices[lo], mesh.vertices[hi]
        for p in range(degree + 1):
            for q in range(degree + 1 - p):
                got = np.sum(quad.weights * quad.points[:, 0]**p
                             * quad.points[:, 1]**q)
                exact = segment_monomial_integral(p0, p1, p, q)
                assert got == pytest.approx(exact, rel=1e-13, abs=1e-15)


def test_face_param_runs_low_to_high_vertex():
    mesh = bmesh.generate_cartesian(2)
    face = mesh.faces[0]
    quad = ps.face_quadrature(mesh, face, 3)
    lo, hi = face.vertex_ids
    p0, p1 = mesh.vertices[lo], mesh.vertices[hi]
    recon = face.midpoint[None, :] + quad.param[:, None] * (p1 - p0)[None, :]
    assert np.allclose(recon, quad.points, atol=1e-15)
    assert np.all(np.diff(quad.param) > 0)


@pytest.mark.parametrize("orth", [False, True])
def test_element_basis_gram(orth, mixed_cells):
    mesh, elem = mixed_cells[13]
    for degree in (0, 1, 2, 3):
        quad = ps.element_quadrature(mesh, elem, 2 * degree)
        basis = ps.scalar_element_basis(mesh, elem, degree, quad,
                                        orthonormalize=orth)
        V = basis.eval(quad.points)
        M = ps.gram_matrix(V, quad.weights)
        if orth:
            assert np.allclose(M, np.eye(basis.dim), atol=1e-12)
        else:
            assert np.allclose(M, M.T, atol=1e-15)
            assert np.all(np.linalg.eigvalsh(M) > 0)


@pytest.mark.parametrize("orth", [False, True])
def test_element_basis_mean_free_structure(orth, mixed_cells):
    for mesh, elem in mixed_cells[::9]:
        quad = ps.element_quadrature(mesh, elem, 6)
        basis = ps.scalar_element_basis(mesh, elem, 2, quad,
                                        orthonormalize=orth)
        ints = quad.weights @ basis.eval(quad.points)
        # Constant mode carries the whole cell mean, the rest are mean-free.
        assert abs(ints[0]) > 0
        assert np.all(np.abs(ints[1:]) <= 1e-13 * elem.area**0.5)
        # Graded structure: coefficient matrix stays lower triangular.
        assert np.allclose(basis.coeff, np.tril(basis.coeff))


def test_basis_gradient_matches_fd(mixed_cells):
    mesh, elem = mixed_cells[20]
    quad = ps.element_quadrature(mesh, elem, 6)
    basis = ps.scalar_element_basis(mesh, elem, 3, quad, orthonormalize=True)
    pts = elem.star_point[None, :] + 0.05 * elem.diameter * np.array(
        [[0.1, 0.2], [-0.3, 0.15], [0.25, -0.2]])
    G = basis.grad(pts)
    h = 1e-6 * elem.diameter
    for d in range(2):
        step = np.zeros(2)
        step[d] = h
        fd = (basis.eval(pts + step) - basis.eval(pts - step)) / (2 * h)
        assert np.allclose(G[:, :, d], fd, atol=1e-7)


def test_l2_project_scalar_on_face_matches_dense_oracle():
    mesh = bmesh.generate_cartesian(2)
    face = next(f for f in mesh.faces if not f.boundary)
    quad = ps.face_quadrature(mesh, face, 9)
    basis = ps.face_basis(mesh, face, 1, quad)

    def fn(pts):
        return np.sin(np.pi * (pts[:, 0] + 0.5 * pts[:, 1]))

    got = ps.l2_project(fn, basis, quad)
    # Dense oracle: 60-point Gauss rule, moments assembled independently.
    dense = ps.face_quadrature(mesh, face, 119)
    V = basis.eval(dense.param)
    M = V.T @ (V * dense.weights[:, None])
    rhs = V.T @ (dense.weights * fn(dense.points))
    oracle = np.linalg.solve(M, rhs)
    assert np.allclose(got, oracle, atol=1e-12)


def test_l2_project_vector_on_element():
    mesh = bmesh.generate_polygonal(2, "agglomerated")
    elem = mesh.elements[0]
    quad = ps.element_quadrature(mesh, elem, 9)
    basis = ps.scalar_element_basis(mesh, elem, 2, quad, orthonormalize=True)

    def fn(pts):
        return np.stack([np.sin(pts[:, 0]), np.cos(pts[:, 1])], axis=1)

    coeffs = ps.l2_project(fn, basis, quad)
    assert coeffs.shape == (2, basis.dim)
    # The projection reproduces polynomial inputs exactly.
    def poly(pts):
        return np.stack([1.0 + 2.0 * pts[:, 0] * pts[:, 1],
                         pts[:, 1]**2 - pts[:, 0]], axis=1)
    cp = ps.l2_project(poly, basis, quad)
    V = basis.eval(quad.points)
    recon = np.stack([V @ cp[0], V @ cp[1]], axis=1)
    assert np.allclose(recon, poly(quad.points), atol=1e-12)


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_poly_decomposition_dimensions(m, mixed_cells):
    for mesh, elem in mixed_cells[::11]:
        rep = ps.check_poly_decomposition(mesh, elem, m)
        assert rep["dim_grad"] == ps.scalar_space_dim(m + 1) - 1
        assert rep["dim_rot"] == ps.scalar_space_dim(m - 1)
        assert rep["dim_grad"] + rep["dim_rot"] == rep["dim_total"]
        # Joint family has full rank: genuine direct sum.
        assert rep["sigma_min"] > 1e-8


def test_rot_complement_is_tangential_about_star_point():
    # Members of the rotational family are pointwise orthogonal to the
    # position vector about the star point: (x - x_T) . w(x) = 0.
    mesh = bmesh.generate_polygonal(2, "agglomerated")
    elem = mesh.elements[0]
    quad = ps.element_quadrature(mesh, elem, 6)
    basis_lo = ps.scalar_element_basis(mesh, elem, 2, quad, mean_free=False)
    rot = ps.rot_complement_values(basis_lo, elem.star_point, quad.points)
    rel = quad.points - elem.star_point[None, :]
    radial = np.einsum("nd,nrd->nr", rel, rot)
    assert np.max(np.abs(radial)) < 1e-14
