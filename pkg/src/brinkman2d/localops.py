"""Per-cell operators of the hybrid scheme.

Unknowns attached to a cell T are a vector polynomial of degree k inside T
plus one vector polynomial of degree k per face. Coefficient blocks are laid
out element-first, then faces in loop order; within a block the x-component
coefficients precede the y-component ones.

From these unknowns the builder assembles, per cell, dense matrices for

* a discrete gradient into degree-k tensor polynomials and its trace, the
  discrete divergence;
* a degree-(k+1) velocity potential adapted to viscous (Stokes-type)
  behaviour and a degree-k potential adapted to Darcy-type behaviour;
* a friction-regime switch: with friction number Cf = nu h^2 / mu, cells
  with Cf < 1 use the plain element component as Darcy potential, cells
  with Cf >= 1 use the full reconstruction (ties count as Darcy);
* stabilised symmetric bilinear forms for the viscous and Darcy parts, a
  divergence/pressure coupling block, and load functionals.

All regime decisions go through a thresholded coefficient so that vanishing
viscosity (mu = 0, pure Darcy) and vanishing friction (nu = 0, pure Stokes)
are handled without special-casing downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import polyspace as ps
from .mesh import element_weight


class CoefficientError(Exception):
    """Inadmissible viscosity / friction coefficient pair."""


class LocalSolveError(Exception):
    """A per-cell linear solve failed (names the cell and operator)."""


@dataclass
class SchemeConfig:
    """Knobs of the discretisation.

    Attributes
    ----------
    k : int
        Polynomial degree of the face and element unknowns (k >= 0).
    stab_stokes, stab_darcy : float
        Scalings of the two stabilisation terms (defaults 3 and 0.3).
    eps : float
        Regularisation threshold for the friction coefficient.
    orthonormalize : bool or None
        Per-cell basis orthonormalisation; None picks it for k >= 2.
    condense : bool
        Eliminate cell unknowns before the global solve.
    solver : {'direct', 'minres'}
    quad_bump : int
        Extra quadrature degree for data terms (loads, interpolation).
    """

    k: int = 0
    stab_stokes: float = 3.0
    stab_darcy: float = 0.3
    eps: float = 1e-14
    orthonormalize: bool | None = None
    condense: bool = True
    solver: str = "direct"
    quad_bump: int = 2

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("polynomial degree k must be >= 0")

    @property
    def orth(self):
        return self.k >= 2 if self.orthonormalize is None else self.orthonormalize

    @staticmethod
    def darcy_stab_preset(k):
        """Degree-scaled Darcy stabilisation weight 10^-(k+1)."""
        return 10.0 ** (-(k + 1))


def friction_coefficient(mu, nu, h, eps=1e-14):
    """Friction number and its thresholded variant for one cell.

    Returns
    -------
    (cf, cf_hat) : float pair
        cf = nu h^2 / mu (inf when mu = 0); cf_hat = max(eps, cf) for
        mu > eps and 1/eps otherwise, so cf_hat is always in (0, inf) and
        the regime truth value cf_hat < 1 matches cf < 1 away from the
        threshold.

    Raises
    ------
    CoefficientError
        If mu <= eps and nu = 0 (no operator left on the cell).
    """
    if mu < 0 or nu < 0:
        raise CoefficientError(f"negative coefficients (mu={mu}, nu={nu})")
    if mu <= eps:
        if nu <= 0:
            raise CoefficientError(
                f"degenerate coefficients mu={mu} <= eps and nu=0")
        cf = math.inf if mu == 0.0 else nu * h * h / mu
        return cf, 1.0 / eps
    cf = nu * h * h / mu
    return cf, max(eps, cf)


class CoefficientField:
    """Per-cell viscosity mu and friction nu with derived regime data."""

    def __init__(self, mesh, mu, nu, eps=1e-14):
        self.mu = np.asarray(mu, dtype=float)
        self.nu = np.asarray(nu, dtype=float)
        if self.mu.shape != (mesh.n_elements,) or self.nu.shape != (mesh.n_elements,):
            raise CoefficientError("need one (mu, nu) pair per cell")
        self.eps = eps
        self.cf = np.empty(mesh.n_elements)
        self.cf_hat = np.empty(mesh.n_elements)
        for e in mesh.elements:
            self.cf[e.id], self.cf_hat[e.id] = friction_coefficient(
                self.mu[e.id], self.nu[e.id], e.diameter, eps)
        self.stokes_dominated = self.cf_hat < 1.0

    @classmethod
    def constant(cls, mesh, mu, nu, eps=1e-14):
        n = mesh.n_elements
        return cls(mesh, np.full(n, float(mu)), np.full(n, float(nu)), eps)

    @classmethod
    def from_subdomains(cls, mesh, table, labels=None, eps=1e-14):
        """Map subdomain labels to (mu, nu) pairs.

        `labels` overrides the labels stored on the mesh.
        """
        if labels is None:
            labels = mesh.subdomain_labels()
        try:
            pairs = [table[lab] for lab in labels]
        except KeyError as exc:
            raise CoefficientError(f"no coefficients for subdomain {exc}")
        mu = np.array([p[0] for p in pairs], dtype=float)
        nu = np.array([p[1] for p in pairs], dtype=float)
        return cls(mesh, mu, nu, eps)

    def census(self):
        ns = int(np.count_nonzero(self.stokes_dominated))
        return {"stokes_dominated": ns,
                "darcy_dominated": int(self.cf.size - ns)}


class LocalDofLayout:
    """Index bookkeeping for one cell's unknown vector."""

    def __init__(self, k, n_faces):
        self.k = k
        self.n_scalar = ps.scalar_space_dim(k)
        self.n_face_scalar = k + 1
        self.n_faces = n_faces
        self.elem_dim = 2 * self.n_scalar
        self.face_dim = 2 * self.n_face_scalar
        self.total = self.elem_dim + n_faces * self.face_dim
        self.scalar_total = self.n_scalar + n_faces * self.n_face_scalar

    def elem_slice(self, component=None):
        if component is None:
            return slice(0, self.elem_dim)
        return slice(component * self.n_scalar, (component + 1) * self.n_scalar)

    def face_slice(self, i, component=None):
        base = self.elem_dim + i * self.face_dim
        if component is None:
            return slice(base, base + self.face_dim)
        start = base + component * self.n_face_scalar
        return slice(start, start + self.n_face_scalar)

    def scalar_to_vector(self, component):
        """Vector-dof indices of the scalar sub-layout for one component."""
        idx = np.empty(self.scalar_total, dtype=int)
        idx[:self.n_scalar] = np.arange(self.n_scalar) \
            + component * self.n_scalar
        for i in range(self.n_faces):
            s = self.n_scalar + i * self.n_face_scalar
            idx[s:s + self.n_face_scalar] = np.arange(self.n_face_scalar) \
                + self.face_slice(i, component).start
        return idx


@dataclass
class ElementOperators:
    """All per-cell matrices plus the bases needed to use them."""

    element: object
    layout: LocalDofLayout
    mu: float
    nu: float
    cf: float
    cf_hat: float
    stokes_dominated: bool
    weight: float                    # h_T^2/|T| * card(F_T)
    basis_k: object
    basis_k1: object
    face_bases: list
    quad: object
    quad_rhs: object
    face_quads: list
    face_quads_rhs: list
    mass_k: np.ndarray               # element Gram of P^k
    face_mass: list                  # per-face Gram of P^k(F)
    mean_vec: np.ndarray             # integrals of the pressure basis
    grad: np.ndarray                 # (4 Nk, n) tensor-valued gradient
    div: np.ndarray                  # (Nk, n)
    stokes_pot: np.ndarray           # (2 Nk1, n)
    darcy_pot: np.ndarray            # (2 Nk, n)
    regime_pot: np.ndarray           # (2 Nk, n)
    dof_product: np.ndarray          # (n, n)
    stokes_form: np.ndarray          # (n, n)
    darcy_form: np.ndarray           # (n, n)
    coupling: np.ndarray             # (n, Nk)
    interp_stokes: np.ndarray = field(repr=False, default=None)
    interp_darcy: np.ndarray = field(repr=False, default=None)

    def local_matrix(self):
        """Velocity block mu*A_S + nu*A_D of this cell."""
        return self.mu * self.stokes_form + self.nu * self.darcy_form

    def interpolate(self, fn):
        """Project a vector field onto the cell's unknown vector."""
        lay = self.layout
        out = np.empty(lay.total)
        c = ps.l2_project(fn, self.basis_k, self.quad_rhs)
        out[lay.elem_slice(0)] = c[0]
        out[lay.elem_slice(1)] = c[1]
        for i, (fb, fq) in enumerate(zip(self.face_bases, self.face_quads_rhs)):
            cf_ = ps.l2_project(fn, fb, fq)
            out[lay.face_slice(i, 0)] = cf_[0]
            out[lay.face_slice(i, 1)] = cf_[1]
        return out

    def rhs_velocity(self, f):
        """Load vector v -> int_T f . (regime potential of v)."""
        vals = np.asarray(f(self.quad_rhs.points), dtype=float)
        V = self.basis_k.eval(self.quad_rhs.points)
        w = self.quad_rhs.weights
        moments = np.concatenate([V.T @ (w * vals[:, 0]),
                                  V.T @ (w * vals[:, 1])])
        return self.regime_pot.T @ moments

    def rhs_pressure(self, g):
        """Moments of the mass source against the pressure basis."""
        vals = np.asarray(g(self.quad_rhs.points), dtype=float)
        V = self.basis_k.eval(self.quad_rhs.points)
        return V.T @ (self.quad_rhs.weights * vals)

    def eval_potential(self, dofs, points):
        """Regime-consistent velocity potential sampled at points."""
        lay = self.layout
        if self.stokes_dominated:
            c = self.stokes_pot @ dofs
            V = self.basis_k1.eval(points)
            n1 = self.basis_k1.dim
            return np.stack([V @ c[:n1], V @ c[n1:]], axis=1)
        c = self.darcy_pot @ dofs
        V = self.basis_k.eval(points)
        nk = self.basis_k.dim
        return np.stack([V @ c[:nk], V @ c[nk:]], axis=1)


def _solve_or_raise(mat, rhs, eid, what):
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise LocalSolveError(f"cell {eid}: singular {what} system") from exc


def build_element_ops(mesh, elem, mu, nu, config):
    """Construct the full operator bundle for one cell."""
    k = config.k
    orth = config.orth
    cf, cf_hat = friction_coefficient(mu, nu, elem.diameter, config.eps)
    lay = LocalDofLayout(k, len(elem.face_ids))
    nk = lay.n_scalar
    deg_main = 2 * k + 3
    deg_rhs = deg_main + config.quad_bump

    quad = ps.element_quadrature(mesh, elem, deg_main)
    quad_rhs = ps.element_quadrature(mesh, elem, deg_rhs)
    basis_k = ps.scalar_element_basis(mesh, elem, k, quad, orthonormalize=orth)
    basis_k1 = ps.scalar_element_basis(mesh, elem, k + 1, quad,
                                       orthonormalize=orth)
    nk1 = basis_k1.dim

    w = quad.weights
    Vk = basis_k.eval(quad.points)
    Gk = basis_k.grad(quad.points)
    Vk1 = basis_k1.eval(quad.points)
    Gk1 = basis_k1.grad(quad.points)

    def _sym(M):
        return 0.5 * (M + M.T)

    Mk = _sym(ps.gram_matrix(Vk, w))
    wVk = Vk * w[:, None]
    K1 = _sym(Gk1[:, :, 0].T @ (Gk1[:, :, 0] * w[:, None])
              + Gk1[:, :, 1].T @ (Gk1[:, :, 1] * w[:, None]))
    Sx = Gk1[:, :, 0].T @ wVk            # (nk1, nk): int dphi^{k+1} phi^k
    Sy = Gk1[:, :, 1].T @ wVk
    Dx = Gk[:, :, 0].T @ wVk             # (nk, nk)
    Dy = Gk[:, :, 1].T @ wVk
    Ncross = wVk.T @ Vk1                 # (nk, nk1)
    # Mean-free bases integrate to zero beyond the constant mode.
    m0 = float(w @ Vk[:, 0])
    mean_vec = np.zeros(nk)
    mean_vec[0] = m0
    m0_k1 = float(w @ Vk1[:, 0])

    face_bases, face_quads, face_quads_rhs = [], [], []
    face_mass, trace_k, trace_k1 = [], [], []
    for fid in elem.face_ids:
        face = mesh.faces[fid]
        fq = ps.face_quadrature(mesh, face, deg_main)
        fqr = ps.face_quadrature(mesh, face, deg_rhs)
        fb = ps.face_basis(mesh, face, k, fq, orthonormalize=orth)
        Psi = fb.eval(fq.param)
        wPsi = Psi * fq.weights[:, None]
        face_bases.append(fb)
        face_quads.append(fq)
        face_quads_rhs.append(fqr)
        face_mass.append(_sym(ps.gram_matrix(Psi, fq.weights)))
        trace_k.append(wPsi.T @ basis_k.eval(fq.points))     # (k+1, nk)
        trace_k1.append(wPsi.T @ basis_k1.eval(fq.points))   # (k+1, nk1)

    # Scalar discrete gradient: for each scalar unknown triple (element
    # polynomial, face polynomials) produce the vector polynomial defined by
    # int_T g . q = -int_T v_T div q + sum_F w_TF int_F v_F (q.n_F).
    nsc = lay.scalar_total
    Bx = np.zeros((nk, nsc))
    By = np.zeros((nk, nsc))
    Bx[:, :nk] = -Dx
    By[:, :nk] = -Dy
    for i, fid in enumerate(elem.face_ids):
        face = mesh.faces[fid]
        sgn = elem.orientation[i]
        cols = slice(nk + i * (k + 1), nk + (i + 1) * (k + 1))
        Bx[:, cols] = sgn * face.normal[0] * trace_k[i].T
        By[:, cols] = sgn * face.normal[1] * trace_k[i].T
    gx = _solve_or_raise(Mk, Bx, elem.id, "gradient")
    gy = _solve_or_raise(Mk, By, elem.id, "gradient")

    sc2vec = [lay.scalar_to_vector(0), lay.scalar_to_vector(1)]
    G = np.zeros((4 * nk, lay.total))
    D = np.zeros((nk, lay.total))
    for c, idx in enumerate(sc2vec):
        G[2 * c * nk:(2 * c + 1) * nk, idx] = gx
        G[(2 * c + 1) * nk:(2 * c + 2) * nk, idx] = gy
    D[:, sc2vec[0]] = gx
    D[:, sc2vec[1]] = gy

    # Viscous potential, componentwise: the degree-(k+1) polynomial whose
    # gradient is the orthogonal projection of the discrete gradient onto
    # gradients of P^{k+1}, with the cell mean matched to the element part.
    bord = np.zeros((nk1 + 1, nk1 + 1))
    bord[:nk1, :nk1] = K1
    bord[:nk1, nk1] = 0.0
    bord[nk1, :nk1] = 0.0
    bord[nk1, nk1] = 0.0
    bord[0, nk1] = m0_k1
    bord[nk1, 0] = m0_k1
    rhs_sc = np.zeros((nk1 + 1, nsc))
    rhs_sc[:nk1] = Sx @ gx + Sy @ gy
    rhs_sc[nk1, :nk] = mean_vec
    pot_sc = _solve_or_raise(bord, rhs_sc, elem.id, "viscous potential")[:nk1]
    P_S = np.zeros((2 * nk1, lay.total))
    for c, idx in enumerate(sc2vec):
        P_S[c * nk1:(c + 1) * nk1, idx] = pot_sc

    # Darcy potential: tested against gradients of P^{k+1} (constant mode
    # dropped) plus the rotational complement family; the system is square.
    nrot = ps.scalar_space_dim(k - 1)
    ngrad = nk1 - 1
    rotv = ps.rot_complement_values(
        basis_k if k >= 1 else None, elem.star_point, quad.points)
    rotv = rotv[:, :nrot, :]
    Tmat = np.zeros((2 * nk, 2 * nk))
    Tmat[:ngrad, :nk] = Sx[1:, :]
    Tmat[:ngrad, nk:] = Sy[1:, :]
    rhs_d = np.zeros((2 * nk, lay.total))
    rhs_d[:ngrad, :] = -(Ncross.T)[1:, :] @ D
    for i, fid in enumerate(elem.face_ids):
        face = mesh.faces[fid]
        sgn = elem.orientation[i]
        for c in range(2):
            rhs_d[:ngrad, lay.face_slice(i, c)] += \
                sgn * face.normal[c] * trace_k1[i][:, 1:].T
    if nrot:
        Wx = rotv[:, :, 0].T @ wVk       # (nrot, nk)
        Wy = rotv[:, :, 1].T @ wVk
        Tmat[ngrad:, :nk] = Wx
        Tmat[ngrad:, nk:] = Wy
        rhs_d[ngrad:, lay.elem_slice(0)] = Wx
        rhs_d[ngrad:, lay.elem_slice(1)] = Wy
    P_D = _solve_or_raise(Tmat, rhs_d, elem.id, "darcy potential")

    stokes_dom = bool(cf_hat < 1.0)
    if stokes_dom:
        P_reg = np.zeros((2 * nk, lay.total))
        P_reg[:, lay.elem_slice()] = np.eye(2 * nk)
    else:
        P_reg = P_D

    # Interpolates of the two potentials back onto the unknown vector.
    R_S = np.zeros((lay.total, 2 * nk1))
    R_D = np.zeros((lay.total, 2 * nk))
    elem_R = _solve_or_raise(Mk, Ncross, elem.id, "potential projection")
    face_R1 = [_solve_or_raise(face_mass[i], trace_k1[i], elem.id,
                               "face trace projection")
               for i in range(lay.n_faces)]
    face_Rk = [_solve_or_raise(face_mass[i], trace_k[i], elem.id,
                               "face trace projection")
               for i in range(lay.n_faces)]
    for c in range(2):
        R_S[lay.elem_slice(c), c * nk1:(c + 1) * nk1] = elem_R
        R_D[lay.elem_slice(c), c * nk:(c + 1) * nk] = np.eye(nk)
        for i in range(lay.n_faces):
            R_S[lay.face_slice(i, c), c * nk1:(c + 1) * nk1] = face_R1[i]
            R_D[lay.face_slice(i, c), c * nk:(c + 1) * nk] = face_Rk[i]
    delta_S = np.eye(lay.total) - R_S @ P_S
    delta_D = np.eye(lay.total) - R_D @ P_D

    # Scaled product on the unknown vector. Faces of Darcy-dominated cells
    # on the domain boundary carry no unknowns in the continuous-space
    # analogue, so their weight is exactly zero.
    lam = element_weight(elem)
    M_U = np.zeros((lay.total, lay.total))
    for c in range(2):
        M_U[lay.elem_slice(c), lay.elem_slice(c)] = lam * Mk
    hT = elem.diameter
    for i, fid in enumerate(elem.face_ids):
        keep = 1.0 if (stokes_dom or not mesh.faces[fid].boundary) else 0.0
        for c in range(2):
            sl = lay.face_slice(i, c)
            M_U[sl, sl] = (hT * keep) * face_mass[i]

    cons_S = np.zeros((lay.total, lay.total))
    for r in range(4):
        Gr = G[r * nk:(r + 1) * nk, :]
        cons_S += Gr.T @ Mk @ Gr
    cut_S = min(1.0, 1.0 / cf_hat)
    A_S = _sym(cons_S
               + (config.stab_stokes * cut_S / hT**2) * (delta_S.T @ M_U @ delta_S))

    cons_D = np.zeros((lay.total, lay.total))
    for c in range(2):
        Pc = P_reg[c * nk:(c + 1) * nk, :]
        cons_D += Pc.T @ Mk @ Pc
    cut_D = min(1.0, cf_hat)
    A_D = _sym(cons_D + (config.stab_darcy * cut_D) * (delta_D.T @ M_U @ delta_D))

    B = -D.T @ Mk

    return ElementOperators(
        element=elem, layout=lay, mu=float(mu), nu=float(nu), cf=cf,
        cf_hat=cf_hat, stokes_dominated=stokes_dom, weight=lam,
        basis_k=basis_k, basis_k1=basis_k1, face_bases=face_bases,
        quad=quad, quad_rhs=quad_rhs, face_quads=face_quads,
        face_quads_rhs=face_quads_rhs, mass_k=Mk, face_mass=face_mass,
        mean_vec=mean_vec, grad=G, div=D, stokes_pot=P_S, darcy_pot=P_D,
        regime_pot=P_reg, dof_product=M_U, stokes_form=A_S, darcy_form=A_D,
        coupling=B, interp_stokes=R_S, interp_darcy=R_D)


def build_operator_sets(mesh, coeffs, config):
    """Operator bundles for every cell, in element-id order."""
    return [build_element_ops(mesh, e, coeffs.mu[e.id], coeffs.nu[e.id], config)
            for e in mesh.elements]
