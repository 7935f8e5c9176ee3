"""Error measures, convergence studies, interface fluxes and the cavity demo.

The headline quantity is the relative combined error

    E = sqrt(|u_h - I_h u|_energy^2 + |p_h - pi p|_L2^2)
        / sqrt(|I_h u|_energy^2 + |pi p|_L2^2)

where the energy seminorm weights the Stokes and Darcy parts of the local
forms by mu and nu. Convergence rates are per-step log ratios over a mesh
family with strictly decreasing h.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .assembly import (BoundaryData, GlobalLayout, assemble, condense,
                       condition_estimate, solve)
from .localops import CoefficientField, build_operator_sets
from .mesh import generate_cartesian, generate_polygonal
from .polyspace import l2_project


class VerificationError(Exception):
    """Broken norm, degenerate error quotient or bad study setup."""


def interpolate_global(mesh, ops, layout, fn, pure_darcy=False):
    """Full-layout velocity DOF vector of the interpolate of fn.

    With pure_darcy=True, boundary faces keep only the normal part of the
    trace, mirroring the constrained interpolation convention used for
    boundary data when mu vanishes everywhere.
    """
    vec = np.zeros(layout.n_velocity)
    for elem in mesh.elements:
        loc = ops[elem.id].interpolate(fn)
        vec[layout.elem_slice(elem.id)] = loc[:layout.elem_dim]
        off = layout.elem_dim
        half = layout.face_dim // 2
        for i, fid in enumerate(elem.face_ids):
            block = loc[off:off + layout.face_dim]
            face = mesh.faces[fid]
            if pure_darcy and face.boundary:
                nrm = face.normal
                cn = nrm[0] * block[:half] + nrm[1] * block[half:]
                block = np.concatenate([nrm[0] * cn, nrm[1] * cn])
            vec[layout.face_slice(fid)] = block
            off += layout.face_dim
    return vec


def project_pressure_global(mesh, ops, fn):
    """Broken degree-k projection coefficients, element-major."""
    nk = ops[0].layout.n_scalar
    vec = np.empty(mesh.n_elements * nk)
    for elem in mesh.elements:
        op = ops[elem.id]
        vec[elem.id * nk:(elem.id + 1) * nk] = \
            l2_project(fn, op.basis_k, op.quad_rhs)
    return vec


def energy_seminorms(mesh, ops, layout, velocity):
    """Squared mu- and nu-weighted parts of the energy norm."""
    s_sq = 0.0
    d_sq = 0.0
    scale = 0.0
    for elem in mesh.elements:
        op = ops[elem.id]
        loc = layout.extract_local(velocity, mesh, elem.id)
        qs = float(loc @ op.stokes_form @ loc)
        qd = float(loc @ op.darcy_form @ loc)
        scale = max(scale, abs(op.mu * qs), abs(op.nu * qd))
        s_sq += op.mu * qs
        d_sq += op.nu * qd
    floor = -1e-10 * max(scale, 1.0)
    if s_sq < floor or d_sq < floor:
        raise VerificationError(
            f"energy form went negative (stokes {s_sq:.3e}, darcy {d_sq:.3e})")
    return max(s_sq, 0.0), max(d_sq, 0.0)


def energy_norm(mesh, ops, layout, velocity):
    s_sq, d_sq = energy_seminorms(mesh, ops, layout, velocity)
    return float(np.sqrt(s_sq + d_sq))


def pressure_l2_norm(mesh, ops, pressure):
    nk = ops[0].layout.n_scalar
    total = 0.0
    for elem in mesh.elements:
        op = ops[elem.id]
        c = pressure[elem.id * nk:(elem.id + 1) * nk]
        total += float(c @ op.mass_k @ c)
    return float(np.sqrt(max(total, 0.0)))


class ErrorReport:
    """Error measures and run metadata for one solve."""

    def __init__(self, h, n_elements, condensed_dofs, error, error_velocity,
                 error_pressure, denom_velocity, denom_pressure,
                 time_assembly, time_solve, cond_estimate=None, rate=None):
        self.h = h
        self.n_elements = n_elements
        self.condensed_dofs = condensed_dofs
        self.error = error
        self.error_velocity = error_velocity
        self.error_pressure = error_pressure
        self.denom_velocity = denom_velocity
        self.denom_pressure = denom_pressure
        self.time_assembly = time_assembly
        self.time_solve = time_solve
        self.cond_estimate = cond_estimate
        self.rate = rate

    def quotient_residual(self):
        """Difference between stored E and its recomputed definition."""
        num = np.sqrt(self.error_velocity ** 2 + self.error_pressure ** 2)
        den = np.sqrt(self.denom_velocity ** 2 + self.denom_pressure ** 2)
        return abs(self.error - num / den)


def error_report(mesh, ops, layout, solution, case, time_assembly=0.0,
                 time_solve=0.0, cond_estimate=None):
    """Measure a discrete solution against a manufactured case."""
    pure = case.is_pure_darcy()
    iu = interpolate_global(mesh, ops, layout, case.u, pure_darcy=pure)
    pp = project_pressure_global(mesh, ops, case.p)
    ev = energy_norm(mesh, ops, layout, solution.velocity - iu)
    ep = pressure_l2_norm(mesh, ops, solution.pressure - pp)
    dv = energy_norm(mesh, ops, layout, iu)
    dp = pressure_l2_norm(mesh, ops, pp)
    den = np.sqrt(dv ** 2 + dp ** 2)
    if den <= 0.0:
        raise VerificationError("exact solution has zero energy: relative "
                                "error undefined")
    return ErrorReport(
        h=mesh.h, n_elements=mesh.n_elements,
        condensed_dofs=solution.n_solved,
        error=float(np.sqrt(ev ** 2 + ep ** 2) / den),
        error_velocity=ev, error_pressure=ep,
        denom_velocity=dv, denom_pressure=dp,
        time_assembly=time_assembly, time_solve=time_solve,
        cond_estimate=cond_estimate)


def solve_case(mesh, case, config, with_condition=False):
    """Assemble, solve and measure one level of a study.

    Returns (report, solution). Wall times cover assembly+condensation and
    the factorisation/solve respectively.
    """
    coeffs = case.coefficient_field(mesh, eps=config.eps)
    t0 = time.perf_counter()
    ops = build_operator_sets(mesh, coeffs, config)
    boundary = case.boundary_data(mesh, ops)
    system = assemble(mesh, coeffs, case.f, case.g, boundary, config, ops=ops)
    target = condense(system) if config.condense else system
    t1 = time.perf_counter()
    solution = solve(target)
    t2 = time.perf_counter()
    cond = None
    if with_condition:
        cond, _ = condition_estimate(target.matrix)
    report = error_report(mesh, ops, system.layout, solution, case,
                          time_assembly=t1 - t0, time_solve=t2 - t1,
                          cond_estimate=cond)
    return report, solution


class ConvergenceTable:
    """Ordered error reports plus per-step rates; may be partial."""

    def __init__(self, case_name, k, reports, failure=None):
        self.case_name = case_name
        self.k = k
        self.reports = reports
        self.failure = failure
        for a, b in zip(reports, reports[1:]):
            if not b.h < a.h:
                raise VerificationError("mesh family must refine strictly")
            b.rate = float(np.log(a.error / b.error) / np.log(a.h / b.h)) \
                if a.error > 0.0 and b.error > 0.0 else None

    @property
    def rates(self):
        return [r.rate for r in self.reports]

    def final_rate(self):
        return self.reports[-1].rate if len(self.reports) > 1 else None


def convergence_study(case, meshes, config, workers=1, with_condition=False):
    """Solve a case over a refining mesh family and tabulate rates.

    Levels run on a thread pool when workers > 1; reports are gathered in
    the given mesh order so the table, and everything derived from it, does
    not depend on scheduling. A failing level truncates the table at the
    preceding one and records the failure.
    """
    if len(meshes) < 2:
        raise VerificationError("need at least two refinement levels")

    def run(mesh):
        return solve_case(mesh, case, config,
                          with_condition=with_condition)[0]

    reports = []
    failure = None
    if workers <= 1:
        results = []
        for mesh in meshes:
            try:
                results.append(run(mesh))
            except Exception as exc:  # noqa: BLE001 - reported, not hidden
                failure = f"h={mesh.h:.4g}: {exc}"
                break
        reports = results
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, mesh) for mesh in meshes]
            for mesh, fut in zip(meshes, futures):
                try:
                    reports.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    failure = f"h={mesh.h:.4g}: {exc}"
                    break
    return ConvergenceTable(case.name, config.k, reports, failure=failure)


def cartesian_family(ns, domain=(0.0, 0.0, 1.0, 1.0)):
    return [generate_cartesian(n, domain) for n in ns]


def polygonal_family(ns, kind, seed=0):
    return [generate_polygonal(n, kind, seed=seed) for n in ns]


def faces_on_vertical_line(mesh, x, y_range=None):
    """Ids of faces lying on the line {x} x y_range, ordered by id."""
    out = []
    lo, hi = (-np.inf, np.inf) if y_range is None else y_range
    tol = 1e-12 * max(1.0, mesh.h)
    for face in mesh.faces:
        pts = mesh.vertices[list(face.vertex_ids)]
        if np.max(np.abs(pts[:, 0] - x)) > tol:
            continue
        if pts[:, 1].min() >= lo - tol and pts[:, 1].max() <= hi + tol:
            out.append(face.id)
    return out


def interface_flux(mesh, ops, layout, velocity, face_ids, normal):
    """Sum of face-unknown fluxes through a straight interface.

    Exact integration of the face polynomials; every face must be
    orthogonal to `normal` or the set is rejected.
    """
    normal = np.asarray(normal, dtype=float)
    flux = 0.0
    half = layout.face_dim // 2
    for fid in face_ids:
        face = mesh.faces[fid]
        pts = mesh.vertices[list(face.vertex_ids)]
        span = abs((pts[1] - pts[0]) @ normal)
        if span > 1e-12 * max(1.0, face.diameter):
            raise VerificationError(
                f"face {fid} does not lie on the declared interface")
        eid = face.elements[0]
        i = mesh.elements[eid].face_ids.index(face.id)
        op = ops[eid]
        Psi = op.face_bases[i].eval(op.face_quads[i].param)
        ivec = op.face_quads[i].weights @ Psi
        block = velocity[layout.face_slice(fid)]
        flux += normal[0] * (ivec @ block[:half]) \
            + normal[1] * (ivec @ block[half:])
    return float(flux)


class CavityProblem:
    """Lid-driven cavity embedded in a heterogeneous porous box.

    Domain (-1,2) x (-1,1); pure Stokes cavity (0,1)^2 with viscosity 1e-2
    under a moving lid on its top edge; a permeable wedge east of the cavity
    with nu = 1e2 between the slanted line y = 0.25(x-1)+0.25 and the top;
    nu = 1e7 in the remaining box. Gravity load f = (0, -0.98), g = 0.
    The reported flux crosses Gamma = {1} x (0.25, 1), oriented into the
    wedge.
    """

    DOMAIN = (-1.0, -1.0, 2.0, 1.0)
    TABLE = {0: (1e-2, 0.0), 1: (0.0, 1e2), 2: (0.0, 1e7)}

    def __init__(self, n):
        if n < 4 or n % 4:
            raise VerificationError(
                "cavity demo needs n to be a positive multiple of 4 so the "
                "grid lines hit x in {0, 1} and y = 0.25")
        self.n = n
        self.mesh = generate_cartesian(3 * n, self.DOMAIN, ny=2 * n)
        self.labels = self._labels()

    def _labels(self):
        labels = np.empty(self.mesh.n_elements, dtype=int)
        for elem in self.mesh.elements:
            cx, cy = elem.centroid
            if 0.0 < cx < 1.0 and 0.0 < cy < 1.0:
                labels[elem.id] = 0
            elif 1.0 < cx < 2.0 and cy > 0.25 * (cx - 1.0) + 0.25:
                labels[elem.id] = 1
            else:
                labels[elem.id] = 2
        return labels

    def coefficient_field(self, eps=1e-14):
        return CoefficientField.from_subdomains(self.mesh, self.TABLE,
                                                labels=self.labels, eps=eps)

    @staticmethod
    def lid_velocity(pts):
        x = pts[:, 0]
        out = np.zeros(pts.shape, dtype=np.asarray(x).dtype)
        out[:, 0] = x * (1.0 - x)
        return out

    def boundary_data(self, ops):
        values = {}
        y_top = self.DOMAIN[3]
        for face in self.mesh.boundary_faces():
            pts = self.mesh.vertices[list(face.vertex_ids)]
            on_lid = np.max(np.abs(pts[:, 1] - y_top)) <= 1e-12 \
                and pts[:, 0].min() >= -1e-12 and pts[:, 0].max() <= 1 + 1e-12
            if not on_lid:
                continue
            eid = face.elements[0]
            i = self.mesh.elements[eid].face_ids.index(face.id)
            op = ops[eid]
            c = l2_project(self.lid_velocity, op.face_bases[i],
                           op.face_quads_rhs[i])
            values[face.id] = np.concatenate([c[0], c[1]])
        return BoundaryData(values)

    @staticmethod
    def load(pts):
        out = np.zeros((len(pts), 2))
        out[:, 1] = -0.98
        return out

    def interface_faces(self):
        return faces_on_vertical_line(self.mesh, 1.0, (0.25, 1.0))

    def solve(self, config):
        """Returns (flux, solution, ops, layout, diagnostics dict)."""
        coeffs = self.coefficient_field(eps=config.eps)
        t0 = time.perf_counter()
        ops = build_operator_sets(self.mesh, coeffs, config)
        boundary = self.boundary_data(ops)
        system = assemble(self.mesh, coeffs, self.load, None, boundary,
                          config, ops=ops)
        target = condense(system) if config.condense else system
        t1 = time.perf_counter()
        solution = solve(target)
        t2 = time.perf_counter()
        layout = system.layout
        flux = interface_flux(self.mesh, ops, layout, solution.velocity,
                              self.interface_faces(), (1.0, 0.0))
        info = {
            "h": self.mesh.h,
            "n_elements": self.mesh.n_elements,
            "condensed_dofs": solution.n_solved,
            "time_assembly": t1 - t0,
            "time_solve": t2 - t1,
            "far_velocity": self.far_velocity(ops, layout, solution),
        }
        return flux, solution, ops, layout, info

    def far_velocity(self, ops, layout, solution):
        """Max reconstructed velocity magnitude at cell vertices for y < 0."""
        worst = 0.0
        for elem in self.mesh.elements:
            if elem.centroid[1] >= 0.0:
                continue
            loc = layout.extract_local(solution.velocity, self.mesh, elem.id)
            vals = ops[elem.id].eval_potential(
                loc, self.mesh.element_coords(elem))
            worst = max(worst, float(np.max(np.linalg.norm(vals, axis=1))))
        return worst
