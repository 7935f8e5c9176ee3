"""Scaled polynomial bases and quadrature on polygonal cells and edges.

Element bases are monomials in the frame ((x - x_T) / h_T) attached to the
cell star point, graded lexicographically (1, xi, eta, xi^2, xi eta, ...).
Two optional transforms keep the linear algebra well conditioned and give
the pressure space a clean structure:

* mean-free: every non-constant basis function is shifted to zero cell mean,
  so the coefficient of the leading constant is the cell average;
* orthonormal: Cholesky orthonormalisation of the cell Gram matrix (graded
  order preserved, so leading sub-bases still span the lower-degree spaces).

Cell quadrature triangulates the polygon as a fan around the star point and
applies a collapsed-square Gauss rule per triangle, exact to the requested
total degree with positive weights. Edge quadrature is Gauss-Legendre.
"""
from __future__ import annotations

import numpy as np


def scalar_space_dim(degree):
    """dim P^m in two variables; zero for negative m."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


def monomial_exponents(degree):
    """Graded lexicographic exponent pairs for P^degree."""
    return np.array([(t - j, j) for t in range(degree + 1)
                     for j in range(t + 1)], dtype=int).reshape(-1, 2)


class QuadRule:
    """Quadrature points and weights on a cell (or reference simplex).

    Attributes
    ----------
    points : ndarray, shape (n, 2)
    weights : ndarray, shape (n,)
        Positive; sums to the cell area.
    degree : int
        Largest total polynomial degree integrated exactly.
    """

    __slots__ = ("points", "weights", "degree")

    def __init__(self, points, weights, degree):
        self.points = points
        self.weights = weights
        self.degree = degree


class FaceQuadRule:
    """Gauss rule along a straight edge.

    Attributes
    ----------
    points : ndarray, shape (n, 2)
        Physical coordinates on the edge.
    param : ndarray, shape (n,)
        Normalised arc-length coordinate (s - s_mid)/|F| in (-1/2, 1/2),
        increasing from the lower-id to the higher-id vertex.
    weights : ndarray, shape (n,)
        Positive; sums to the edge length.
    degree : int
    """

    __slots__ = ("points", "param", "weights", "degree")

    def __init__(self, points, param, weights, degree):
        self.points = points
        self.param = param
        self.weights = weights
        self.degree = degree


def _gauss01(n):
    # Gauss-Legendre nodes/weights moved from [-1, 1] to [0, 1].
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(degree):
    """Collapsed-square Gauss rule on the unit triangle (0,0),(1,0),(0,1).

    Under x = u, y = v (1 - u) a total-degree-d integrand becomes degree
    d + 1 in u and d in v, which fixes the 1D point counts.
    """
    degree = max(degree, 0)
    nu = (degree + 3) // 2
    nv = (degree + 2) // 2
    u, wu = _gauss01(nu)
    v, wv = _gauss01(max(nv, 1))
    U, V = np.meshgrid(u, v, indexing="ij")
    X = U.ravel()
    Y = (V * (1.0 - U)).ravel()
    W = (np.outer(wu * (1.0 - u), wv)).ravel()
    return QuadRule(np.stack([X, Y], axis=1), W, degree)


def element_quadrature(mesh, element, degree):
    """Fan-triangulated quadrature over a star-shaped cell.

    Exact to total `degree`; weights positive and summing to the cell area.
    """
    ref = triangle_rule(degree)
    coords = mesh.element_coords(element)
    a = element.star_point
    pts = []
    wts = []
    nvert = coords.shape[0]
    for i in range(nvert):
        b = coords[i]
        c = coords[(i + 1) % nvert]
        jac = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        mapped = a[None, :] + np.outer(ref.points[:, 0], b - a) \
            + np.outer(ref.points[:, 1], c - a)
        pts.append(mapped)
        wts.append(ref.weights * jac)
    return QuadRule(np.vstack(pts), np.concatenate(wts), degree)


def face_quadrature(mesh, face, degree):
    """Gauss-Legendre rule along an edge, exact to `degree`."""
    n = max((degree + 2) // 2, 1)
    t, w = np.polynomial.legendre.leggauss(n)
    lo, hi = face.vertex_ids
    p0, p1 = mesh.vertices[lo], mesh.vertices[hi]
    param = 0.5 * t
    pts = face.midpoint[None, :] + np.outer(param, p1 - p0)
    return FaceQuadRule(pts, param, 0.5 * w * face.measure, degree)


class ElementBasis:
    """Basis of P^degree on a cell, as combinations of scaled monomials.

    ``coeff[i, j]`` holds the weight of monomial j in basis function i; the
    matrix is lower triangular in the graded order, so the first dim(P^m)
    functions always span P^m for m <= degree.
    """

    __slots__ = ("degree", "dim", "center", "scale", "exps", "coeff")

    def __init__(self, degree, center, scale, coeff=None):
        self.degree = degree
        self.dim = scalar_space_dim(degree)
        self.center = center
        self.scale = scale
        self.exps = monomial_exponents(degree)
        self.coeff = np.eye(self.dim) if coeff is None else coeff

    def _local(self, points):
        return (points - self.center[None, :]) / self.scale

    def eval(self, points):
        """Basis values, shape (npts, dim)."""
        xi = self._local(np.atleast_2d(points))
        V = xi[:, 0:1] ** self.exps[:, 0] * xi[:, 1:2] ** self.exps[:, 1]
        return V @ self.coeff.T

    def grad(self, points):
        """Basis gradients, shape (npts, dim, 2)."""
        xi = self._local(np.atleast_2d(points))
        n = xi.shape[0]
        G = np.zeros((n, self.dim, 2))
        a = self.exps[:, 0]
        b = self.exps[:, 1]
        with np.errstate(invalid="ignore"):
            gx = np.where(a > 0, a, 0) * xi[:, 0:1] ** np.maximum(a - 1, 0) \
                * xi[:, 1:2] ** b
            gy = np.where(b > 0, b, 0) * xi[:, 0:1] ** a \
                * xi[:, 1:2] ** np.maximum(b - 1, 0)
        G[:, :, 0] = gx @ self.coeff.T / self.scale
        G[:, :, 1] = gy @ self.coeff.T / self.scale
        return G


class FaceBasis:
    """Basis of P^degree on an edge in the normalised arc parameter."""

    __slots__ = ("degree", "dim", "coeff")

    def __init__(self, degree, coeff=None):
        self.degree = degree
        self.dim = degree + 1
        self.coeff = np.eye(self.dim) if coeff is None else coeff

    def eval(self, param):
        """Basis values at parameter points in [-1/2, 1/2], (npts, dim)."""
        t = np.atleast_1d(param)
        V = t[:, None] ** np.arange(self.dim)[None, :]
        return V @ self.coeff.T


def gram_matrix(values, weights):
    """Weighted Gram matrix of sampled (scalar) basis values."""
    return values.T @ (values * weights[:, None])


def scalar_element_basis(mesh, element, degree, quad, orthonormalize=False,
                         mean_free=True):
    """Construct the cell basis used for velocities and pressures.

    The quadrature rule must be exact to 2*degree. With `mean_free` the
    non-constant functions integrate to zero over the cell, making the
    leading coefficient the cell-mean mode. With `orthonormalize` the basis
    has identity Gram matrix (Cholesky of the monomial Gram, graded order).
    """
    basis = ElementBasis(degree, element.star_point, element.diameter)
    V = basis.eval(quad.points)
    if mean_free and basis.dim > 1:
        integrals = quad.weights @ V
        C = np.eye(basis.dim)
        C[1:, 0] = -integrals[1:] / element.area
        basis = ElementBasis(degree, element.star_point, element.diameter, C)
        V = basis.eval(quad.points)
    if orthonormalize:
        M = gram_matrix(V, quad.weights)
        if mean_free and basis.dim > 1:
            # The constant-vs-rest couplings are mean integrals, zero by
            # construction; kill quadrature roundoff so the Cholesky factor
            # keeps the mean-free structure exactly.
            M[0, 1:] = 0.0
            M[1:, 0] = 0.0
        L = np.linalg.cholesky(M)
        C = np.linalg.solve(L, basis.coeff)
        basis = ElementBasis(degree, element.star_point, element.diameter, C)
    return basis


def face_basis(mesh, face, degree, quad, orthonormalize=False):
    """Construct the edge basis for face unknowns (velocity traces)."""
    basis = FaceBasis(degree)
    if orthonormalize:
        V = basis.eval(quad.param)
        M = gram_matrix(V, quad.weights)
        L = np.linalg.cholesky(M)
        basis = FaceBasis(degree, np.linalg.solve(L, np.eye(degree + 1)))
    return basis


def l2_project(fn, basis, quad, param=None):
    """L2-orthogonal projection of a callable onto a basis.

    Parameters
    ----------
    fn : callable
        Maps (n, 2) points to (n,) scalars or (n, 2) vectors. For face
        bases the callable still receives physical points.
    basis : ElementBasis or FaceBasis
    quad : QuadRule or FaceQuadRule
    param : ndarray, optional
        Parameter coordinates for FaceBasis evaluation (defaults to
        ``quad.param``).

    Returns
    -------
    ndarray
        Coefficients, shape (dim,) for scalar data or (2, dim) for vector
        data (component-major).
    """
    if isinstance(basis, FaceBasis):
        V = basis.eval(quad.param if param is None else param)
    else:
        V = basis.eval(quad.points)
    vals = np.asarray(fn(quad.points), dtype=float)
    M = gram_matrix(V, quad.weights)
    if vals.ndim == 1:
        return np.linalg.solve(M, V.T @ (quad.weights * vals))
    moments = V.T @ (vals * quad.weights[:, None])
    return np.linalg.solve(M, moments).T


def rot_complement_values(basis_lower, center, points):
    """Values of the rotational complement family at given points.

    The family is (x - x_T)^perp q for q in a basis of P^{m-1}, with
    (a, b)^perp = (b, -a) (rotation by -pi/2). Together with gradients of
    P^{m+1} it spans the vector polynomials of degree m. Returns an array
    of shape (npts, dim_lower, 2); empty middle axis when m = 0.
    """
    pts = np.atleast_2d(points)
    rel = pts - center[None, :]
    perp = np.stack([rel[:, 1], -rel[:, 0]], axis=1)
    if basis_lower is None or basis_lower.dim == 0:
        return np.zeros((pts.shape[0], 0, 2))
    vals = basis_lower.eval(pts)
    return vals[:, :, None] * perp[:, None, :]


def check_poly_decomposition(mesh, element, m, quad=None):
    """Verify vP^m = grad P^{m+1} (+) rotational complement on one cell.

    Projects both families onto an orthonormal basis of the vector-valued
    P^m space and reports the joint coefficient matrix's extreme singular
    values; full rank certifies the direct-sum decomposition.

    Returns
    -------
    dict with keys dim_total, dim_grad, dim_rot, sigma_min, sigma_max.
    """
    if quad is None:
        quad = element_quadrature(mesh, element, 2 * m + 2)
    onb = scalar_element_basis(mesh, element, m, quad, orthonormalize=True,
                               mean_free=False)
    Vm = onb.eval(quad.points)                     # (n, Nm)
    basis_hi = scalar_element_basis(mesh, element, m + 1, quad,
                                    orthonormalize=True, mean_free=False)
    Gh = basis_hi.grad(quad.points)[:, 1:, :]      # drop the constant
    rot = rot_complement_values(
        scalar_element_basis(mesh, element, m - 1, quad, orthonormalize=True,
                             mean_free=False) if m >= 1 else None,
        element.star_point, quad.points)
    fams = np.concatenate([Gh, rot], axis=1)       # (n, nfuncs, 2)
    nm = Vm.shape[1]
    nf = fams.shape[1]
    # Coefficients of each family member in the orthonormal vP^m basis.
    coeffs = np.zeros((2 * nm, nf))
    wV = Vm * quad.weights[:, None]
    for c in range(2):
        coeffs[c * nm:(c + 1) * nm, :] = wV.T @ fams[:, :, c]
    s = np.linalg.svd(coeffs, compute_uv=False)
    return {
        "dim_total": 2 * nm,
        "dim_grad": Gh.shape[1],
        "dim_rot": rot.shape[1],
        "sigma_min": float(s.min()) if s.size else 0.0,
        "sigma_max": float(s.max()) if s.size else 0.0,
    }
