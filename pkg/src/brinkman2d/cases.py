"""Built-in manufactured solutions with closed-form sources.

Every case stores the exact velocity, pressure, velocity gradient, momentum
source f = -div(mu grad u) + nu u + grad p and mass source g = div u as
separate closed-form closures. self_check() cross-validates them with
complex-step derivatives of u, grad_u and p, which are exact to machine
precision for the analytic branches used here, so a wrong sign or factor in
any closure shows up far above the 1e-10 gate.

All closures accept complex-valued point arrays; subdomain branches decide
membership on the real part only.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_CS_STEP = 1e-30


class CaseError(Exception):
    """Case and mesh/config disagree (interface, labels, parameters)."""


def _poly_eval(terms, x, y):
    out = np.zeros_like(x)
    for c, i, j in terms:
        out = out + c * x ** i * y ** j
    return out


def _poly_dx(terms):
    return [(c * i, i - 1, j) for c, i, j in terms if i > 0]


def _poly_dy(terms):
    return [(c * j, i, j - 1) for c, i, j in terms if j > 0]


def _poly_scale(terms, s):
    return [(c * s, i, j) for c, i, j in terms]


def _poly_mean_unit_square(terms):
    return sum(c / ((i + 1.0) * (j + 1.0)) for c, i, j in terms)


class ManufacturedCase:
    """Exact solution bundle for one model problem on (0,1)^2.

    Parameters
    ----------
    name : str
    u, p, grad_u, f : callables on (n, 2) point arrays
        u -> (n, 2); p -> (n,); grad_u -> (n, 2, 2) with [i, j] = d_j u_i;
        f -> (n, 2).
    g : callable or None
        Mass source; None stands for identically zero.
    table : dict
        subdomain label -> (mu, nu).
    label_fn : callable
        points -> integer labels consistent with `table`.
    note : str
        Short description of the solution's regularity, carried into
        reports.
    interface_x : float, optional
        Vertical material interface; meshes must not cut across it.
    """

    def __init__(self, name, u, p, grad_u, f, g, table, label_fn, note,
                 interface_x=None):
        self.name = name
        self.u = u
        self.p = p
        self.grad_u = grad_u
        self.f = f
        self.g = g
        self.table = table
        self.label_fn = label_fn
        self.note = note
        self.interface_x = interface_x

    def is_pure_darcy(self, eps=1e-14):
        return all(mu <= eps for mu, _ in self.table.values())

    def element_labels(self, mesh):
        """Per-cell labels; refuses meshes whose cells straddle interfaces."""
        if self.interface_x is not None:
            for elem in mesh.elements:
                xs = mesh.vertices[elem.vertex_ids, 0]
                if xs.min() < self.interface_x - 1e-12 \
                        and xs.max() > self.interface_x + 1e-12:
                    raise CaseError(
                        f"cell {elem.id} straddles the interface "
                        f"x = {self.interface_x}")
        coords = np.array([e.centroid for e in mesh.elements])
        return self.label_fn(coords)

    def coefficient_field(self, mesh, eps=1e-14):
        from .localops import CoefficientField
        labels = self.element_labels(mesh)
        return CoefficientField.from_subdomains(mesh, self.table,
                                                labels=labels, eps=eps)

    def boundary_data(self, mesh, ops):
        from .assembly import BoundaryData
        return BoundaryData.from_function(mesh, ops, self.u,
                                          pure_darcy=self.is_pure_darcy())

    def self_check(self, n=100, seed=0):
        """Max residuals of the PDE relations over random sample points.

        Returns a dict with 'gradient' (grad_u closure vs complex-step of
        u), 'momentum' (f closure vs complex-step assembly of the momentum
        equation) and 'mass' (g closure vs complex-step divergence).
        """
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.05, 0.95, size=(n, 2))
        if self.interface_x is not None:
            keep = np.abs(pts[:, 0] - self.interface_x) > 0.02
            pts = pts[keep]
        h = _CS_STEP

        du = []      # du[j][:, i] = d_j u_i
        dgrad = []   # dgrad[j][:, i, l] = d_j (grad_u)_{il}
        for j in range(2):
            shift = pts.astype(complex)
            shift[:, j] += 1j * h
            du.append(np.asarray(self.u(shift)).imag / h)
            dgrad.append(np.asarray(self.grad_u(shift)).imag / h)
        grad_cs = np.stack([du[0], du[1]], axis=2)
        grad_err = np.max(np.abs(np.asarray(self.grad_u(pts)).real - grad_cs))

        lap = dgrad[0][:, :, 0] + dgrad[1][:, :, 1]
        grad_p = np.empty((len(pts), 2))
        for j in range(2):
            shift = pts.astype(complex)
            shift[:, j] += 1j * h
            grad_p[:, j] = np.asarray(self.p(shift)).imag / h

        labels = self.label_fn(pts)
        mu = np.array([self.table[lab][0] for lab in labels])
        nu = np.array([self.table[lab][1] for lab in labels])
        uv = np.asarray(self.u(pts)).real
        momentum = (-mu[:, None] * lap + nu[:, None] * uv + grad_p
                    - np.asarray(self.f(pts)).real)
        div_u = du[0][:, 0] + du[1][:, 1]
        mass = div_u - (np.asarray(self.g(pts)).real
                        if self.g is not None else 0.0)

        scale_f = max(1.0, float(np.max(np.abs(self.f(pts)))))
        scale_u = max(1.0, float(np.max(np.abs(uv))))
        return {
            "gradient": float(grad_err) / scale_u,
            "momentum": float(np.max(np.abs(momentum))) / scale_f,
            "mass": float(np.max(np.abs(mass))) / scale_u,
        }


def _blend_params(cf_omega=None, mu=None, nu=None):
    if mu is None and nu is None:
        if cf_omega is None:
            raise CaseError("give cf_omega or an explicit (mu, nu) pair")
        cf = float(cf_omega)
        if cf < 0.0:
            raise CaseError("cf_omega must be nonnegative")
        if cf == 0.0:
            return 1.0, 0.0, 0.0
        if np.isinf(cf):
            return 0.0, 1.0, np.inf
        return 1.0, cf, cf
    if mu is None or nu is None:
        raise CaseError("mu and nu must be given together")
    mu, nu = float(mu), float(nu)
    if mu < 0.0 or nu < 0.0:
        raise CaseError("mu and nu must be nonnegative")
    cf = np.inf if mu == 0.0 else nu / mu
    return mu, nu, cf


def regime_blend(cf_omega=None, mu=None, nu=None):
    """Trigonometric Stokes/Darcy superposition on the unit square.

    The exact velocity blends the divergence-free Stokes field u_S and the
    potential field u_D = -grad(p)/nu with the weight chi = exp(-cf), where
    cf = nu/mu is the global friction number (infinite for mu = 0). Both
    fields are eigenfunctions of the Laplacian, which keeps f compact:
    f = (8 pi^2 mu + nu) u + grad p.
    """
    mu, nu, cf = _blend_params(cf_omega, mu, nu)
    chi = float(np.exp(-cf))

    def p(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.sin(_TWO_PI * x) * np.sin(_TWO_PI * y)

    def grad_p(pts):
        x, y = pts[:, 0], pts[:, 1]
        return _TWO_PI * np.stack([
            np.cos(_TWO_PI * x) * np.sin(_TWO_PI * y),
            np.sin(_TWO_PI * x) * np.cos(_TWO_PI * y)], axis=1)

    def hess_p(pts):
        x, y = pts[:, 0], pts[:, 1]
        ss = np.sin(_TWO_PI * x) * np.sin(_TWO_PI * y)
        cc = np.cos(_TWO_PI * x) * np.cos(_TWO_PI * y)
        out = np.empty(pts.shape[:1] + (2, 2), dtype=ss.dtype)
        out[:, 0, 0] = -_TWO_PI ** 2 * ss
        out[:, 0, 1] = _TWO_PI ** 2 * cc
        out[:, 1, 0] = _TWO_PI ** 2 * cc
        out[:, 1, 1] = -_TWO_PI ** 2 * ss
        return out

    def u_stokes(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([
            np.sin(_TWO_PI * x) * np.cos(_TWO_PI * y),
            -np.cos(_TWO_PI * x) * np.sin(_TWO_PI * y)], axis=1)

    def grad_u_stokes(pts):
        x, y = pts[:, 0], pts[:, 1]
        cc = np.cos(_TWO_PI * x) * np.cos(_TWO_PI * y)
        ss = np.sin(_TWO_PI * x) * np.sin(_TWO_PI * y)
        out = np.empty(pts.shape[:1] + (2, 2), dtype=cc.dtype)
        out[:, 0, 0] = _TWO_PI * cc
        out[:, 0, 1] = -_TWO_PI * ss
        out[:, 1, 0] = _TWO_PI * ss
        out[:, 1, 1] = -_TWO_PI * cc
        return out

    inv_nu = 0.0 if nu == 0.0 else 1.0 / nu

    def u(pts):
        return chi * u_stokes(pts) - (1.0 - chi) * inv_nu * grad_p(pts)

    def grad_u(pts):
        return chi * grad_u_stokes(pts) - (1.0 - chi) * inv_nu * hess_p(pts)

    fac = 8.0 * np.pi ** 2 * mu + nu

    def f(pts):
        return fac * u(pts) + grad_p(pts)

    if nu == 0.0:
        g = None
    else:
        gfac = (1.0 - chi) * 8.0 * np.pi ** 2 * inv_nu

        def g(pts):
            return gfac * p(pts)

    cf_txt = "inf" if np.isinf(cf) else f"{cf:g}"
    return ManufacturedCase(
        name=f"regime-blend(cf={cf_txt})",
        u=u, p=p, grad_u=grad_u, f=f, g=g,
        table={0: (mu, nu)},
        label_fn=lambda pts: np.zeros(len(pts), dtype=int),
        note="smooth in both unknowns; rates k+1 expected at any friction")


def discontinuous():
    """Brinkman/pure-Darcy pair split at x = 1/2 with H^1 velocity.

    The subdomain parts carry the factor s(x) = cos(pi x)(x - 1/2), which
    vanishes to second order at the interface, so the velocity stays H^1
    and its normal gradient is zero there; f stays bounded even though the
    coefficients jump from (1, 1e7) to (0, 1e2).
    """
    table = {0: (1.0, 1.0e7), 1: (0.0, 1.0e2)}

    def labels(pts):
        return (np.asarray(pts)[:, 0].real >= 0.5).astype(int)

    def s(x):
        return np.cos(np.pi * x) * (x - 0.5)

    def sp(x):
        return np.cos(np.pi * x) - np.pi * np.sin(np.pi * x) * (x - 0.5)

    def spp(x):
        return -2.0 * np.pi * np.sin(np.pi * x) \
            - np.pi ** 2 * np.cos(np.pi * x) * (x - 0.5)

    def p(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.sin(_TWO_PI * x) * np.sin(_TWO_PI * y)

    def grad_p(pts):
        x, y = pts[:, 0], pts[:, 1]
        return _TWO_PI * np.stack([
            np.cos(_TWO_PI * x) * np.sin(_TWO_PI * y),
            np.sin(_TWO_PI * x) * np.cos(_TWO_PI * y)], axis=1)

    def _sides(pts):
        x = pts[:, 0]
        mask = np.asarray(x).real >= 0.5
        return x, pts[:, 1], mask

    def u(pts):
        x, y, mask = _sides(pts)
        u0 = np.stack([np.exp(-y), np.sin(np.pi * y)], axis=1)
        side_s = np.stack([y, np.cos(np.pi * y)], axis=1)
        side_d = np.stack([np.sin(np.pi * y), y ** 2], axis=1)
        return u0 + s(x)[:, None] * np.where(mask[:, None], side_d, side_s)

    def grad_u(pts):
        x, y, mask = _sides(pts)
        sx, spx = s(x), sp(x)
        g0 = np.zeros(pts.shape[:1] + (2, 2), dtype=np.asarray(x).dtype)
        g0[:, 0, 1] = -np.exp(-y)
        g0[:, 1, 1] = np.pi * np.cos(np.pi * y)
        gs = np.empty_like(g0)
        gs[:, 0, 0] = spx * y
        gs[:, 0, 1] = sx
        gs[:, 1, 0] = spx * np.cos(np.pi * y)
        gs[:, 1, 1] = -np.pi * sx * np.sin(np.pi * y)
        gd = np.empty_like(g0)
        gd[:, 0, 0] = spx * np.sin(np.pi * y)
        gd[:, 0, 1] = np.pi * sx * np.cos(np.pi * y)
        gd[:, 1, 0] = spx * y ** 2
        gd[:, 1, 1] = 2.0 * sx * y
        return g0 + np.where(mask[:, None, None], gd, gs)

    def f(pts):
        x, y, mask = _sides(pts)
        uv = u(pts)
        gp = grad_p(pts)
        # Stokes side: mu = 1, so the Laplacian of u enters.
        sx, sppx = s(x), spp(x)
        lap = np.stack([
            np.exp(-y) + sppx * y,
            -np.pi ** 2 * np.sin(np.pi * y)
            + sppx * np.cos(np.pi * y)
            - np.pi ** 2 * sx * np.cos(np.pi * y)], axis=1)
        f_s = -lap + table[0][1] * uv + gp
        f_d = table[1][1] * uv + gp
        return np.where(mask[:, None], f_d, f_s)

    def g(pts):
        x, y, mask = _sides(pts)
        sx, spx = s(x), sp(x)
        base = np.pi * np.cos(np.pi * y)
        g_s = spx * y - np.pi * sx * np.sin(np.pi * y)
        g_d = spx * np.sin(np.pi * y) + 2.0 * sx * y
        return base + np.where(mask, g_d, g_s)

    return ManufacturedCase(
        name="discontinuous-coefficients",
        u=u, p=p, grad_u=grad_u, f=f, g=g,
        table=table, label_fn=labels,
        note="H^1 velocity with a pure Darcy subdomain; Cartesian meshes "
             "aligned with x = 1/2 required",
        interface_x=0.5)


def _poly_case_closures(u_terms, p_terms, mu, nu):
    """Closures for polynomial (u, p) with f assembled term-wise."""
    u1, u2 = u_terms
    u1x, u1y = _poly_dx(u1), _poly_dy(u1)
    u2x, u2y = _poly_dx(u2), _poly_dy(u2)
    lap1 = _poly_dx(u1x) + _poly_dy(u1y)
    lap2 = _poly_dx(u2x) + _poly_dy(u2y)
    px, py = _poly_dx(p_terms), _poly_dy(p_terms)
    f1 = _poly_scale(lap1, -mu) + _poly_scale(u1, nu) + px
    f2 = _poly_scale(lap2, -mu) + _poly_scale(u2, nu) + py
    g_terms = u1x + u2y

    def u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([_poly_eval(u1, x, y), _poly_eval(u2, x, y)], axis=1)

    def p(pts):
        return _poly_eval(p_terms, pts[:, 0], pts[:, 1])

    def grad_u(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty(pts.shape[:1] + (2, 2), dtype=np.asarray(x).dtype)
        out[:, 0, 0] = _poly_eval(u1x, x, y)
        out[:, 0, 1] = _poly_eval(u1y, x, y)
        out[:, 1, 0] = _poly_eval(u2x, x, y)
        out[:, 1, 1] = _poly_eval(u2y, x, y)
        return out

    def f(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([_poly_eval(f1, x, y), _poly_eval(f2, x, y)], axis=1)

    if g_terms:
        def g(pts):
            return _poly_eval(g_terms, pts[:, 0], pts[:, 1])
    else:
        g = None
    return u, p, grad_u, f, g


def stokes_polynomial(k):
    """Divergence-free velocity of degree k+1 with P^k pressure; mu=1, nu=0.

    Built as the curl of a stream function, so g = 0 for any k; the scheme
    reproduces the interpolate of such data exactly.
    """
    if k < 0:
        raise CaseError("k must be nonnegative")
    psi = [(1.0, 0, k + 2), (1.0, k + 2, 0), (-3.0, 1, k + 1)]
    u1 = _poly_dy(psi)
    u2 = _poly_scale(_poly_dx(psi), -1.0)
    if k == 0:
        p_terms = []
    else:
        p_terms = [(1.0, k, 0), (0.5, 1, k - 1)]
        p_terms.append((-_poly_mean_unit_square(p_terms), 0, 0))
    u, p, grad_u, f, g = _poly_case_closures((u1, u2), p_terms, 1.0, 0.0)
    return ManufacturedCase(
        name=f"stokes-polynomial(k={k})",
        u=u, p=p, grad_u=grad_u, f=f, g=g,
        table={0: (1.0, 0.0)},
        label_fn=lambda pts: np.zeros(len(pts), dtype=int),
        note="polynomial exactness probe for the Stokes limit")


def darcy_polynomial(k):
    """Potential flow u = -grad p with p of degree k+1; mu=0, nu=1.

    f vanishes identically and the discrete solution matches the
    interpolate of u and the degree-k projection of p.
    """
    if k < 0:
        raise CaseError("k must be nonnegative")
    p_terms = [(1.0, k + 1, 0), (1.0, 0, k + 1), (-1.0, 1, k)]
    p_terms.append((-_poly_mean_unit_square(p_terms), 0, 0))
    u1 = _poly_scale(_poly_dx(p_terms), -1.0)
    u2 = _poly_scale(_poly_dy(p_terms), -1.0)
    u, p, grad_u, f, g = _poly_case_closures((u1, u2), p_terms, 0.0, 1.0)
    return ManufacturedCase(
        name=f"darcy-polynomial(k={k})",
        u=u, p=p, grad_u=grad_u, f=f, g=g,
        table={0: (0.0, 1.0)},
        label_fn=lambda pts: np.zeros(len(pts), dtype=int),
        note="polynomial exactness probe for the pure Darcy limit")


def get_case(name, k=0, cf_omega=None, mu=None, nu=None):
    """Case registry used by the command line front end."""
    if name == "blend":
        if cf_omega is None and mu is None and nu is None:
            cf_omega = 1.0
        return regime_blend(cf_omega=cf_omega, mu=mu, nu=nu)
    if name == "discontinuous":
        return discontinuous()
    if name == "stokes-poly":
        return stokes_polynomial(k)
    if name == "darcy-poly":
        return darcy_polynomial(k)
    raise CaseError(f"unknown case '{name}'")
