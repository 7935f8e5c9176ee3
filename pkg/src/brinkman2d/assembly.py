"""Global saddle-point assembly, boundary handling and linear solves.

Unknown ordering in the solved system: interior-face velocity blocks in face
id order, then element velocity blocks, then element pressure blocks, then a
single multiplier enforcing the zero-mean pressure constraint. Dirichlet
faces never enter the system; their prescribed values are folded into the
right-hand side (columns lifted, not penalised), which keeps the matrix
identical between homogeneous and inhomogeneous data.

Static condensation eliminates, cell by cell, the element velocity block and
the mean-free pressure modes. The remaining unknowns are the interior-face
blocks, one mean-pressure value per cell and the multiplier; the eliminated
ones are recovered exactly after the reduced solve.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .localops import build_operator_sets
from .polyspace import element_quadrature, face_quadrature


class AssemblyError(Exception):
    """Inconsistent problem data (incompatible sources, bad boundary data)."""


class CondensationError(Exception):
    """Singular local elimination block (names the cell)."""


class SolverError(Exception):
    """Linear solve failed or produced an unacceptable residual."""


class GlobalLayout:
    """Offsets of full coefficient vectors including boundary faces."""

    def __init__(self, mesh, k):
        from .polyspace import scalar_space_dim
        self.k = k
        self.n_scalar = scalar_space_dim(k)
        self.face_dim = 2 * (k + 1)
        self.elem_dim = 2 * self.n_scalar
        self.n_face_total = mesh.n_faces * self.face_dim
        self.n_velocity = self.n_face_total + mesh.n_elements * self.elem_dim
        self.n_pressure = mesh.n_elements * self.n_scalar

    def face_slice(self, fid):
        return slice(fid * self.face_dim, (fid + 1) * self.face_dim)

    def elem_slice(self, eid):
        base = self.n_face_total + eid * self.elem_dim
        return slice(base, base + self.elem_dim)

    def pressure_slice(self, eid):
        return slice(eid * self.n_scalar, (eid + 1) * self.n_scalar)

    def extract_local(self, velocity, mesh, eid):
        """Cell-local unknown vector from a full velocity vector."""
        elem = mesh.elements[eid]
        parts = [velocity[self.elem_slice(eid)]]
        for fid in elem.face_ids:
            parts.append(velocity[self.face_slice(fid)])
        return np.concatenate(parts)


class GlobalDofMap:
    """Numbering of the solved unknowns (boundary faces excluded)."""

    def __init__(self, mesh, k):
        from .polyspace import scalar_space_dim
        self.k = k
        self.n_scalar = scalar_space_dim(k)
        self.face_dim = 2 * (k + 1)
        self.elem_dim = 2 * self.n_scalar
        self.face_base = np.full(mesh.n_faces, -1, dtype=int)
        pos = 0
        for f in mesh.faces:
            if not f.boundary:
                self.face_base[f.id] = pos
                pos += self.face_dim
        self.n_face_dofs = pos
        self.elem_base = pos
        self.pressure_base = pos + mesh.n_elements * self.elem_dim
        self.multiplier = self.pressure_base + mesh.n_elements * self.n_scalar
        self.n_total = self.multiplier + 1

    def elem_slice(self, eid):
        base = self.elem_base + eid * self.elem_dim
        return slice(base, base + self.elem_dim)

    def pressure_slice(self, eid):
        base = self.pressure_base + eid * self.n_scalar
        return slice(base, base + self.n_scalar)


class BoundaryData:
    """Prescribed face values on the domain boundary.

    Attributes
    ----------
    values : dict
        face id -> coefficient vector in the face basis (2(k+1) entries).
        Missing ids mean zero.
    pure_darcy : bool
        When the whole problem has mu <= eps the face unknowns only act
        through their normal component; interpolation onto the constrained
        space then zeroes boundary blocks entirely.
    """

    def __init__(self, values=None, pure_darcy=False, trace_fn=None):
        self.values = values or {}
        self.pure_darcy = pure_darcy
        self.trace_fn = trace_fn

    @classmethod
    def homogeneous(cls, pure_darcy=False):
        return cls({}, pure_darcy)

    @classmethod
    def from_function(cls, mesh, ops, fn, pure_darcy=False):
        """Project a trace function onto every boundary face basis.

        With pure_darcy=True only the normal part of the trace is kept,
        matching the constrained interpolation convention for mu = 0
        problems where tangential boundary values never enter the scheme.
        """
        from .polyspace import l2_project
        values = {}
        for face in mesh.boundary_faces():
            eid = face.elements[0]
            i = mesh.elements[eid].face_ids.index(face.id)
            op = ops[eid]
            c = l2_project(fn, op.face_bases[i], op.face_quads_rhs[i])
            if pure_darcy:
                nrm = face.normal
                cn = nrm[0] * c[0] + nrm[1] * c[1]
                c = np.array([nrm[0] * cn, nrm[1] * cn])
            values[face.id] = np.concatenate([c[0], c[1]])
        return cls(values, pure_darcy, trace_fn=fn)

    def face_values(self, fid, face_dim):
        v = self.values.get(fid)
        return np.zeros(face_dim) if v is None else v


class GlobalSystem:
    """Assembled saddle-point system plus everything needed to reduce it."""

    def __init__(self, mesh, config, coeffs, ops, dofmap, layout, matrix, rhs,
                 boundary, local_blocks, local_rhs, meta):
        self.mesh = mesh
        self.config = config
        self.coeffs = coeffs
        self.ops = ops
        self.dofmap = dofmap
        self.layout = layout
        self.matrix = matrix
        self.rhs = rhs
        self.boundary = boundary
        self.local_blocks = local_blocks
        self.local_rhs = local_rhs
        self.meta = meta


class CondensedSystem:
    """Schur-reduced system with per-cell recovery data."""

    def __init__(self, parent, matrix, rhs, recovery, n_face_dofs):
        self.parent = parent
        self.matrix = matrix
        self.rhs = rhs
        self.recovery = recovery
        self.n_face_dofs = n_face_dofs

    @property
    def n_total(self):
        return self.rhs.size


class DiscreteSolution:
    """Velocity, pressure and diagnostics of one solve.

    ``velocity`` is indexed by the full GlobalLayout (boundary faces carry
    their prescribed values); ``pressure`` is indexed per cell.
    """

    def __init__(self, velocity, pressure, multiplier, residual, n_solved,
                 condensed):
        self.velocity = velocity
        self.pressure = pressure
        self.multiplier = multiplier
        self.residual = residual
        self.n_solved = n_solved
        self.condensed = condensed


def _local_unknown_ids(mesh, dofmap, elem):
    """Solved-unknown ids for a cell's velocity dofs; -1 marks boundary."""
    ids = np.empty(2 * dofmap.n_scalar + len(elem.face_ids) * dofmap.face_dim,
                   dtype=int)
    sl = dofmap.elem_slice(elem.id)
    ids[:dofmap.elem_dim] = np.arange(sl.start, sl.stop)
    off = dofmap.elem_dim
    for fid in elem.face_ids:
        base = dofmap.face_base[fid]
        if base < 0:
            ids[off:off + dofmap.face_dim] = -1
        else:
            ids[off:off + dofmap.face_dim] = np.arange(
                base, base + dofmap.face_dim)
        off += dofmap.face_dim
    return ids


def assemble(mesh, coeffs, f, g, boundary, config, ops=None):
    """Build the global system for given loads and boundary data.

    Parameters
    ----------
    mesh : PolygonalMesh
    coeffs : CoefficientField
    f, g : callable or None
        Momentum and mass sources; None means zero.
    boundary : BoundaryData
    config : SchemeConfig
    ops : list of ElementOperators, optional
        Reused when already built (they only depend on mesh/coeffs/config).
    """
    if ops is None:
        ops = build_operator_sets(mesh, coeffs, config)
    dofmap = GlobalDofMap(mesh, config.k)
    layout = GlobalLayout(mesh, config.k)
    nk = dofmap.n_scalar

    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.n_total)
    local_blocks = []
    local_rhs_list = []
    total_g = 0.0

    for elem in mesh.elements:
        op = ops[elem.id]
        nT = op.layout.total
        L = np.zeros((nT + nk, nT + nk))
        L[:nT, :nT] = op.local_matrix()
        L[:nT, nT:] = op.coupling
        L[nT:, :nT] = -op.coupling.T
        r = np.zeros(nT + nk)
        if f is not None:
            r[:nT] = op.rhs_velocity(f)
        if g is not None:
            r[nT:] = op.rhs_pressure(g)
            # Compatibility bookkeeping wants more accuracy than the moment
            # rules guarantee for rough sources, hence the dedicated rule.
            qr = element_quadrature(mesh, elem, 2 * config.k + 13)
            total_g += qr.weights @ np.asarray(g(qr.points), dtype=float)

        vel_ids = _local_unknown_ids(mesh, dofmap, elem)
        psl = dofmap.pressure_slice(elem.id)
        gids = np.concatenate([vel_ids, np.arange(psl.start, psl.stop)])

        # Fold prescribed boundary values into the right-hand side.
        lifted = np.flatnonzero(vel_ids < 0)
        if lifted.size:
            ub = np.empty(lifted.size)
            pos = 0
            for fid in elem.face_ids:
                if dofmap.face_base[fid] < 0:
                    fd = dofmap.face_dim
                    ub[pos:pos + fd] = boundary.face_values(fid, fd)
                    pos += fd
            r = r - L[:, lifted] @ ub
        local_blocks.append((L, gids))
        local_rhs_list.append(r)

        keep = gids >= 0
        kid = gids[keep]
        sub = L[np.ix_(keep, keep)]
        rr, cc = np.meshgrid(kid, kid, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(sub.ravel())
        rhs[kid] += r[keep]

        # Zero-mean pressure constraint through the multiplier column/row.
        m0 = op.mean_vec[0]
        rows.append(np.array([psl.start, dofmap.multiplier]))
        cols.append(np.array([dofmap.multiplier, psl.start]))
        vals.append(np.array([m0, m0]))

    # Compatibility: the mass source must balance the boundary inflow.
    total_flux = 0.0
    for face in mesh.boundary_faces():
        nrm = face.normal
        if boundary.trace_fn is not None:
            fq = face_quadrature(mesh, face, 2 * config.k + 13)
            tv = np.asarray(boundary.trace_fn(fq.points), dtype=float)
            total_flux += fq.weights @ (tv @ nrm)
        else:
            ub = boundary.face_values(face.id, dofmap.face_dim)
            eid = face.elements[0]
            i = mesh.elements[eid].face_ids.index(face.id)
            op = ops[eid]
            Psi = op.face_bases[i].eval(op.face_quads[i].param)
            ivec = op.face_quads[i].weights @ Psi
            total_flux += nrm[0] * (ivec @ ub[:dofmap.face_dim // 2]) \
                + nrm[1] * (ivec @ ub[dofmap.face_dim // 2:])
    scale = max(1.0, abs(total_g), abs(total_flux))
    if abs(total_g - total_flux) > 1e-10 * scale:
        raise AssemblyError(
            f"incompatible data: volume source {total_g:.3e} vs boundary "
            f"flux {total_flux:.3e}")

    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.n_total, dofmap.n_total))
    meta = {
        "n_unknowns": dofmap.n_total,
        "n_face_dofs": dofmap.n_face_dofs,
        "nnz": matrix.nnz,
        "regimes": coeffs.census(),
    }
    return GlobalSystem(mesh, config, coeffs, ops, dofmap, layout, matrix,
                        rhs, boundary, local_blocks, local_rhs_list, meta)


def condense(system):
    """Schur-complement elimination of all cell-interior unknowns.

    Keeps interior-face velocity blocks, one mean-pressure unknown per cell
    and the multiplier. The multiplier only ever couples to the retained
    mean-pressure modes, so it passes through untouched.
    """
    mesh = system.mesh
    dofmap = system.dofmap
    nk = dofmap.n_scalar
    nF = dofmap.n_face_dofs
    n_cond = nF + mesh.n_elements + 1
    mult_c = n_cond - 1

    rows, cols, vals = [], [], []
    rhs_c = np.zeros(n_cond)
    recovery = []

    for elem in mesh.elements:
        (L, gids), r = system.local_blocks[elem.id], system.local_rhs[elem.id]
        op = system.ops[elem.id]
        nT = op.layout.total
        elem_dim = op.layout.elem_dim

        local_e = np.concatenate([
            np.arange(elem_dim),                        # element velocity
            np.arange(nT + 1, nT + nk),                 # mean-free pressures
        ])
        face_local = np.flatnonzero(gids[:nT] >= 0)
        face_local = face_local[face_local >= elem_dim]
        local_r = np.concatenate([face_local, [nT]])    # faces + mean mode

        K_EE = L[np.ix_(local_e, local_e)]
        K_ER = L[np.ix_(local_e, local_r)]
        K_RE = L[np.ix_(local_r, local_e)]
        K_RR = L[np.ix_(local_r, local_r)]
        try:
            lu = sla.lu_factor(K_EE)
            if not np.all(np.isfinite(lu[0])):
                raise np.linalg.LinAlgError
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise CondensationError(
                f"cell {elem.id}: singular interior block") from exc
        X = sla.lu_solve(lu, K_ER)
        y = sla.lu_solve(lu, r[local_e])
        S = K_RR - K_RE @ X
        rS = r[local_r] - K_RE @ y

        cond_ids = np.empty(local_r.size, dtype=int)
        cond_ids[:-1] = gids[face_local]     # face dofs keep their numbering
        cond_ids[-1] = nF + elem.id
        rr, cc = np.meshgrid(cond_ids, cond_ids, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(S.ravel())
        rhs_c[cond_ids] += rS

        m0 = op.mean_vec[0]
        rows.append(np.array([nF + elem.id, mult_c]))
        cols.append(np.array([mult_c, nF + elem.id]))
        vals.append(np.array([m0, m0]))

        recovery.append({
            "lu": lu,
            "K_ER": K_ER,
            "r_E": r[local_e],
            "elim_global": np.concatenate([
                gids[:elem_dim],
                np.arange(dofmap.pressure_slice(elem.id).start + 1,
                          dofmap.pressure_slice(elem.id).stop)]),
            "cond_ids": cond_ids,
        })

    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cond, n_cond))
    return CondensedSystem(system, matrix, rhs_c, recovery, nF)


def _direct_solve(matrix, rhs):
    try:
        lu = spla.splu(matrix.tocsc(), permc_spec="COLAMD")
        return lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorisation failed: {exc}") from exc


def _minres_solve(system, matrix, rhs, dofmap):
    # Negating the pressure and multiplier rows turns the saddle system into
    # a symmetric indefinite one that minres accepts.
    n = dofmap.n_total
    flip = np.ones(n)
    flip[dofmap.pressure_base:] = -1.0
    A = sp.diags(flip) @ matrix
    b = flip * rhs
    A = 0.5 * (A + A.T)
    d = np.abs(A.diagonal())
    d[d < 1e-12] = 1.0
    M = sp.diags(1.0 / d)
    try:
        x, info = spla.minres(A, b, rtol=1e-12, maxiter=40 * n, M=M)
    except TypeError:
        x, info = spla.minres(A, b, tol=1e-12, maxiter=40 * n, M=M)
    if info != 0:
        raise SolverError(f"minres did not converge (info={info})")
    return x


def solve(target, return_condensed_vector=False):
    """Solve a GlobalSystem or CondensedSystem and assemble the solution.

    The residual of the full (uncondensed) system is always checked; a
    relative residual above 1e-10 raises SolverError carrying the regime
    census, since breakdowns are typically regime-related.
    """
    if isinstance(target, CondensedSystem):
        parent = target.parent
        xc = _direct_solve(target.matrix, target.rhs)
        x = np.empty(parent.dofmap.n_total)
        x[:target.n_face_dofs] = xc[:target.n_face_dofs]
        x[parent.dofmap.multiplier] = xc[-1]
        for elem in parent.mesh.elements:
            rec = target.recovery[elem.id]
            xr = xc[rec["cond_ids"]]
            xe = sla.lu_solve(rec["lu"], rec["r_E"] - rec["K_ER"] @ xr)
            x[rec["elim_global"]] = xe
            psl = parent.dofmap.pressure_slice(elem.id)
            x[psl.start] = xc[target.n_face_dofs + elem.id]
        solved_size = target.n_total
        condensed = True
    else:
        parent = target
        if parent.config.solver == "minres":
            x = _minres_solve(parent, parent.matrix, parent.rhs, parent.dofmap)
        else:
            x = _direct_solve(parent.matrix, parent.rhs)
        solved_size = parent.dofmap.n_total
        condensed = False

    b = parent.rhs
    res = parent.matrix @ x - b
    bnorm = max(float(np.linalg.norm(b)), 1e-300)
    rel = float(np.linalg.norm(res)) / bnorm
    if not np.isfinite(rel) or rel > 1e-10:
        raise SolverError(
            f"solver residual {rel:.3e} exceeds 1e-10 "
            f"(regimes: {parent.meta['regimes']})")

    dofmap, layout = parent.dofmap, parent.layout
    velocity = np.zeros(layout.n_velocity)
    for face in parent.mesh.faces:
        base = dofmap.face_base[face.id]
        if base >= 0:
            velocity[layout.face_slice(face.id)] = \
                x[base:base + dofmap.face_dim]
        else:
            velocity[layout.face_slice(face.id)] = \
                parent.boundary.face_values(face.id, dofmap.face_dim)
    for elem in parent.mesh.elements:
        velocity[layout.elem_slice(elem.id)] = x[dofmap.elem_slice(elem.id)]
    pressure = x[dofmap.pressure_base:dofmap.multiplier].copy()
    mult = float(x[dofmap.multiplier])

    sol = DiscreteSolution(velocity, pressure, mult, rel, solved_size,
                           condensed)
    if return_condensed_vector and isinstance(target, CondensedSystem):
        return sol, xc
    return sol


def solve_problem(mesh, coeffs, f, g, boundary, config, ops=None):
    """Assemble, optionally condense, and solve in one call."""
    system = assemble(mesh, coeffs, f, g, boundary, config, ops=ops)
    if config.condense:
        return solve(condense(system)), system
    return solve(system), system


def condition_estimate(matrix, tol=0.001, maxiter=500, seed=0):
    """Two-sided power-iteration estimate of the spectral condition number.

    Runs power iterations on A^T A for the largest singular value and on
    (A^T A)^{-1} (through one LU factorisation) for the smallest. Returns
    (estimate, converged); `converged` is False when either iteration hit
    `maxiter` before its Rayleigh quotient settled to `tol`.
    """
    A = matrix.tocsc()
    n = A.shape[0]
    rng = np.random.default_rng(seed)

    def _power(apply_op):
        x = rng.uniform(-1.0, 1.0, n)
        x /= np.linalg.norm(x)
        prev = 0.0
        for it in range(maxiter):
            y = apply_op(x)
            sigma = float(np.linalg.norm(y))
            if sigma == 0.0:
                return 0.0, True
            x = y / sigma
            if it > 2 and abs(sigma - prev) <= tol * sigma:
                return np.sqrt(sigma), True
            prev = sigma
        return np.sqrt(sigma), False

    big, ok_big = _power(lambda v: A.T @ (A @ v))
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError:
        return np.inf, False
    small_inv, ok_small = _power(
        lambda v: lu.solve(lu.solve(v, trans="T"), trans="N"))
    if small_inv == 0.0:
        return np.inf, False
    return big * small_inv, ok_big and ok_small
