"""Polygonal mesh data model for 2D hybrid discretisations.

Meshes are conforming collections of star-shaped polygonal cells. Faces
(straight edges) are derived from the cell loops and numbered in a normative
order, lexicographic by sorted vertex pair, so that degree-of-freedom
numbering is reproducible across runs and platforms. Unit face normals point
from the lower to the higher adjacent element id (outward on the boundary).
"""
from __future__ import annotations

import json
import math

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction and validation failures."""


class MeshFormatError(MeshError):
    """Malformed mesh description (bad indices, orientation, manifoldness)."""


class MeshGenerationError(MeshError):
    """A generator produced an invalid cell (reports the cell id)."""


class DegenerateCellError(MeshError):
    """Cell violates the star-shapedness / inscribed-ball requirements."""


# Ball-to-diameter thresholds for the star point: prefer the centroid when it
# sees the whole cell comfortably, fall back to a sampled point otherwise.
_BALL_GOOD = 0.1
_BALL_MIN = 0.01


class Face:
    """Straight edge shared by one or two cells.

    Attributes
    ----------
    id : int
    vertex_ids : tuple of int
        The two endpoint vertex ids, sorted increasingly. The face parameter
        runs from the lower-id to the higher-id vertex.
    elements : tuple of int
        Adjacent element ids (one entry on the boundary), sorted.
    normal : ndarray, shape (2,)
        Unit normal, oriented from ``elements[0]`` towards ``elements[1]``
        (outward for boundary faces).
    measure, diameter : float
        Both equal the edge length for straight edges.
    midpoint : ndarray, shape (2,)
    boundary : bool
    """

    __slots__ = ("id", "vertex_ids", "elements", "normal", "measure",
                 "diameter", "midpoint", "boundary")

    def __init__(self, fid, vertex_ids, elements, normal, measure, midpoint):
        self.id = fid
        self.vertex_ids = vertex_ids
        self.elements = elements
        self.normal = normal
        self.measure = measure
        self.diameter = measure
        self.midpoint = midpoint
        self.boundary = len(elements) == 1


class Element:
    """Star-shaped polygonal cell.

    Attributes
    ----------
    id : int
    vertex_ids : list of int
        Counterclockwise vertex loop.
    face_ids : list of int
        Faces in loop order (face i joins loop vertices i and i+1).
    orientation : ndarray of float
        Per-face sign relating the face normal to this cell's outward
        normal: +1 if they agree, -1 otherwise. Exactly one of the two
        adjacent cells carries +1 on an interior face.
    diameter, area : float
    centroid, star_point : ndarray, shape (2,)
        ``star_point`` is the fan/quadrature anchor: the centroid when the
        inscribed ball around it is large enough, else a sampled point.
    ball_radius : float
        Radius of the kernel ball centred at ``star_point``.
    subdomain : int or str
        Coefficient-region label.
    """

    __slots__ = ("id", "vertex_ids", "face_ids", "orientation", "diameter",
                 "area", "centroid", "star_point", "ball_radius", "subdomain")

    def __init__(self, eid, vertex_ids, subdomain):
        self.id = eid
        self.vertex_ids = list(vertex_ids)
        self.subdomain = subdomain
        self.face_ids = []
        self.orientation = None
        self.diameter = 0.0
        self.area = 0.0
        self.centroid = None
        self.star_point = None
        self.ball_radius = 0.0


class PolygonalMesh:
    """Conforming polygonal mesh with derived faces and geometry.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 2)
    faces : list of Face
    elements : list of Element
    h : float
        Largest element diameter.
    """

    def __init__(self, vertices, faces, elements):
        self.vertices = vertices
        self.faces = faces
        self.elements = elements
        self.h = max(e.diameter for e in elements)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_elements(self):
        return len(self.elements)

    def boundary_faces(self):
        return [f for f in self.faces if f.boundary]

    def interior_faces(self):
        return [f for f in self.faces if not f.boundary]

    def element_coords(self, element):
        """Vertex coordinates of a cell loop, shape (n, 2)."""
        return self.vertices[element.vertex_ids]

    def subdomain_labels(self):
        return [e.subdomain for e in self.elements]


def _polygon_area_centroid(coords):
    # Shoelace; signed area is positive for counterclockwise loops.
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-300:
        return area, coords.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return area, np.array([cx, cy])


def _kernel_radius(coords, point):
    """Distance from `point` to the nearest edge support line, signed.

    Positive iff `point` lies strictly on the inner side of every edge of the
    counterclockwise loop, i.e. the polygon is star-shaped with respect to a
    ball of that radius around `point`.
    """
    a = coords
    b = np.roll(coords, -1, axis=0)
    edge = b - a
    lengths = np.hypot(edge[:, 0], edge[:, 1])
    if np.any(lengths < 1e-300):
        raise DegenerateCellError("zero-length edge in cell loop")
    # cross(edge, point - a) / |edge| > 0 when point is left of a->b
    rel = point[None, :] - a
    dist = (edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]) / lengths
    return float(dist.min())


def _pick_star_point(coords, diameter, eid):
    area, centroid = _polygon_area_centroid(coords)
    r = _kernel_radius(coords, centroid)
    if r >= _BALL_GOOD * diameter:
        return centroid, r
    # Sample the bounding box for a point with a larger kernel ball.
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    best_p, best_r = centroid, r
    for nx in (9, 17, 33):
        xs = np.linspace(lo[0], hi[0], nx + 2)[1:-1]
        ys = np.linspace(lo[1], hi[1], nx + 2)[1:-1]
        for px in xs:
            for py in ys:
                cand = np.array([px, py])
                rc = _kernel_radius(coords, cand)
                if rc > best_r:
                    best_p, best_r = cand, rc
        if best_r >= _BALL_GOOD * diameter:
            break
    if best_r < _BALL_MIN * diameter:
        raise DegenerateCellError(
            f"cell {eid}: no interior point sees the whole cell "
            f"(best ball/diameter ratio {best_r / diameter:.2e})")
    return best_p, best_r


def _element_geometry(elem, coords):
    area, _ = _polygon_area_centroid(coords)
    if area <= 0.0:
        raise MeshFormatError(
            f"cell {elem.id}: vertex loop is not counterclockwise")
    diffs = coords[:, None, :] - coords[None, :, :]
    diameter = float(np.hypot(diffs[..., 0], diffs[..., 1]).max())
    star, radius = _pick_star_point(coords, diameter, elem.id)
    # Every fan triangle (star, v_i, v_{i+1}) must have positive area.
    a = coords
    b = np.roll(coords, -1, axis=0)
    tri2 = (a[:, 0] - star[0]) * (b[:, 1] - star[1]) \
        - (a[:, 1] - star[1]) * (b[:, 0] - star[0])
    if np.any(tri2 <= 1e-14 * diameter**2):
        raise DegenerateCellError(
            f"cell {elem.id}: degenerate fan triangle from the star point")
    elem.area = float(area)
    elem.diameter = diameter
    elem.centroid = _polygon_area_centroid(coords)[1]
    elem.star_point = star
    elem.ball_radius = radius


def build_mesh(vertices, cells, subdomains=None):
    """Assemble a PolygonalMesh from raw vertex/cell data.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : sequence of sequence of int
        Counterclockwise vertex loops, one per cell.
    subdomains : sequence, optional
        One label per cell; defaults to 0.

    Returns
    -------
    PolygonalMesh

    Raises
    ------
    MeshFormatError
        Out-of-range indices, empty cells, non-CCW loops, non-manifold edges.
    DegenerateCellError
        Cells failing the star-shapedness requirement.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshFormatError("vertices must be an (n, 2) array")
    nv = vertices.shape[0]
    if subdomains is None:
        subdomains = [0] * len(cells)
    if len(subdomains) != len(cells):
        raise MeshFormatError("one subdomain label per cell required")

    elements = []
    for eid, loop in enumerate(cells):
        loop = list(loop)
        if len(loop) < 3:
            raise MeshFormatError(f"cell {eid}: fewer than three vertices")
        for v in loop:
            if not (0 <= v < nv):
                raise MeshFormatError(f"cell {eid}: vertex id {v} out of range")
        if len(set(loop)) != len(loop):
            raise MeshFormatError(f"cell {eid}: repeated vertex in loop")
        elements.append(Element(eid, loop, subdomains[eid]))

    # Derive faces; normative ordering is lexicographic by sorted vertex pair.
    edge_use = {}
    for elem in elements:
        loop = elem.vertex_ids
        for i in range(len(loop)):
            key = tuple(sorted((loop[i], loop[(i + 1) % len(loop)])))
            edge_use.setdefault(key, []).append(elem.id)
    for key, users in edge_use.items():
        if len(users) > 2:
            raise MeshFormatError(
                f"edge {key} shared by more than two cells: {users}")

    face_of_edge = {}
    faces = []
    for fid, key in enumerate(sorted(edge_use)):
        users = tuple(sorted(edge_use[key]))
        p0, p1 = vertices[key[0]], vertices[key[1]]
        measure = float(np.hypot(*(p1 - p0)))
        if measure < 1e-300:
            raise MeshFormatError(f"edge {key}: coincident endpoints")
        faces.append(Face(fid, key, users, None, measure, 0.5 * (p0 + p1)))
        face_of_edge[key] = fid

    for elem in elements:
        _element_geometry(elem, vertices[elem.vertex_ids])
        loop = elem.vertex_ids
        n = len(loop)
        elem.face_ids = [
            face_of_edge[tuple(sorted((loop[i], loop[(i + 1) % n])))]
            for i in range(n)
        ]

    # Normals: outward for the lower-id adjacent cell, then per-cell signs.
    for face in faces:
        owner = elements[face.elements[0]]
        loop = owner.vertex_ids
        n = len(loop)
        for i in range(n):
            a, b = loop[i], loop[(i + 1) % n]
            if tuple(sorted((a, b))) == face.vertex_ids:
                t = vertices[b] - vertices[a]
                t /= np.hypot(*t)
                # Rotate the CCW edge direction by -pi/2: outward normal.
                face.normal = np.array([t[1], -t[0]])
                break
        else:
            raise MeshFormatError(f"face {face.id}: not found in owner loop")

    for elem in elements:
        signs = np.empty(len(elem.face_ids))
        loop = elem.vertex_ids
        n = len(loop)
        for i, fid in enumerate(elem.face_ids):
            a, b = loop[i], loop[(i + 1) % n]
            t = vertices[b] - vertices[a]
            t /= np.hypot(*t)
            outward = np.array([t[1], -t[0]])
            d = float(outward @ faces[fid].normal)
            if abs(abs(d) - 1.0) > 1e-9:
                raise MeshFormatError(
                    f"face {fid}: normal inconsistent with cell {elem.id}")
            signs[i] = 1.0 if d > 0 else -1.0
        elem.orientation = signs

    return PolygonalMesh(vertices, faces, elements)


def compute_geometry(mesh):
    """Recompute all derived geometry in place; returns the mesh.

    Idempotent; useful after externally editing vertex positions.
    """
    for elem in mesh.elements:
        _element_geometry(elem, mesh.vertices[elem.vertex_ids])
    for face in mesh.faces:
        p0, p1 = mesh.vertices[list(face.vertex_ids)]
        face.measure = face.diameter = float(np.hypot(*(p1 - p0)))
        face.midpoint = 0.5 * (p0 + p1)
    mesh.h = max(e.diameter for e in mesh.elements)
    return mesh


def generate_cartesian(n, domain=(0.0, 0.0, 1.0, 1.0), ny=None):
    """Uniform quadrilateral grid on a rectangle.

    Parameters
    ----------
    n : int
        Subdivisions in x (and in y unless `ny` is given), n >= 1.
    domain : tuple (x0, y0, x1, y1)
    ny : int, optional
        Subdivisions in y when the grid is not square.

    Returns
    -------
    PolygonalMesh
        Element diameters all equal the cell diagonal.
    """
    if ny is None:
        ny = n
    if n < 1 or ny < 1:
        raise MeshGenerationError("n must be >= 1")
    x0, y0, x1, y1 = domain
    return _structured_quads(
        np.linspace(x0, x1, n + 1), np.linspace(y0, y1, ny + 1))


def _structured_quads(xs, ys, labels=None):
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for j in range(ny):
        for i in range(nx):
            cells.append([vid(i, j), vid(i + 1, j),
                          vid(i + 1, j + 1), vid(i, j + 1)])
    return build_mesh(vertices, cells, labels)


def generate_polygonal(n, kind, seed=0):
    """Polygonal mesh families on the unit square.

    Parameters
    ----------
    n : int
        Base grid resolution, n >= 2.
    kind : {'perturbed-quad', 'agglomerated', 'triangular'}
        perturbed-quad : interior grid vertices randomly displaced.
        agglomerated : horizontally adjacent cell pairs merged in a
            checkerboard pattern, yielding hexagonal (hanging-node) cells.
        triangular : each grid cell split into two triangles.
    seed : int
        Seeds the displacement draw; output is bit-identical per seed.

    Returns
    -------
    PolygonalMesh
    """
    if n < 2:
        raise MeshGenerationError("n must be >= 2")
    h = 1.0 / n
    xs = np.linspace(0.0, 1.0, n + 1)

    if kind == "triangular":
        def vid(i, j):
            return i * (n + 1) + j
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
        cells = []
        for j in range(n):
            for i in range(n):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
                cells.append([v00, v10, v11])
                cells.append([v00, v11, v01])
        return build_mesh(vertices, cells)

    if kind == "perturbed-quad":
        rng = np.random.default_rng(seed)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
        shift = rng.uniform(-0.2 * h, 0.2 * h, size=vertices.shape)
        interior = ((vertices[:, 0] > 1e-12) & (vertices[:, 0] < 1 - 1e-12)
                    & (vertices[:, 1] > 1e-12) & (vertices[:, 1] < 1 - 1e-12))
        vertices = vertices + shift * interior[:, None]

        def vid(i, j):
            return i * (n + 1) + j
        cells = []
        for j in range(n):
            for i in range(n):
                cells.append([vid(i, j), vid(i + 1, j),
                              vid(i + 1, j + 1), vid(i, j + 1)])
        try:
            return build_mesh(vertices, cells)
        except MeshError as exc:
            raise MeshGenerationError(
                f"perturbed-quad(n={n}, seed={seed}): {exc}") from exc

    if kind == "agglomerated":
        def vid(i, j):
            return i * (n + 1) + j
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
        cells = []
        for j in range(n):
            i = 0
            while i < n:
                merge = (i % 2 == 0) and ((i // 2 + j) % 2 == 0) and i + 1 < n
                if merge:
                    # Hexagonal loop over the double cell; the mid vertices
                    # stay in the loop so the face partition matches the
                    # unmerged neighbours above and below.
                    cells.append([vid(i, j), vid(i + 1, j), vid(i + 2, j),
                                  vid(i + 2, j + 1), vid(i + 1, j + 1),
                                  vid(i, j + 1)])
                    i += 2
                else:
                    cells.append([vid(i, j), vid(i + 1, j),
                                  vid(i + 1, j + 1), vid(i, j + 1)])
                    i += 1
        return build_mesh(vertices, cells)

    raise MeshGenerationError(f"unknown mesh kind {kind!r}")


def load_mesh(path):
    """Read a mesh from the JSON interchange format.

    The format is ``{"vertices": [[x, y], ...], "cells": [[v0, v1, ...],
    ...], "subdomains": [label, ...]}`` with counterclockwise cell loops.
    """
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("vertices", "cells"):
        if key not in data:
            raise MeshFormatError(f"{path}: missing key {key!r}")
    return build_mesh(data["vertices"], data["cells"], data.get("subdomains"))


def save_mesh(mesh, path):
    """Write the JSON interchange form; load(save(m)) reproduces m exactly."""
    data = {
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "cells": [list(map(int, e.vertex_ids)) for e in mesh.elements],
        "subdomains": [e.subdomain for e in mesh.elements],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


class RegularityReport:
    """Shape-regularity census used by `validate`.

    Attributes collect per-element extremes; `violations` lists hard errors
    (the constructing call raises instead when asked to).
    """

    def __init__(self):
        self.max_faces = 0
        self.min_face_ratio = math.inf     # h_F / h_T
        self.min_ball_ratio = math.inf     # r_T / h_T
        self.max_closure_defect = 0.0      # |sum_F w_TF |F| n_F| / h_T
        self.min_element_weight = math.inf
        self.max_element_weight = 0.0      # h_T^2 / |T| * card(F_T)
        self.violations = []

    def __repr__(self):
        return ("RegularityReport(max_faces=%d, min_face_ratio=%.3g, "
                "min_ball_ratio=%.3g, max_closure_defect=%.3g, "
                "element_weight=[%.3g, %.3g], violations=%d)" % (
                    self.max_faces, self.min_face_ratio, self.min_ball_ratio,
                    self.max_closure_defect, self.min_element_weight,
                    self.max_element_weight, len(self.violations)))


def element_weight(elem):
    """Mass-scaling weight h_T^2 / |T| * card(F_T) of the dof product."""
    return elem.diameter**2 / elem.area * len(elem.face_ids)


def validate(mesh):
    """Run geometric sanity checks and return a RegularityReport.

    Checks per element: positive area, star-shapedness ball ratio, closure
    identity sum_F w_TF |F| n_F = 0, and records raw regularity ratios.
    """
    report = RegularityReport()
    for elem in mesh.elements:
        report.max_faces = max(report.max_faces, len(elem.face_ids))
        if elem.area <= 0:
            report.violations.append(f"cell {elem.id}: nonpositive area")
        if elem.ball_radius < _BALL_MIN * elem.diameter:
            report.violations.append(
                f"cell {elem.id}: ball ratio {elem.ball_radius / elem.diameter:.2e}")
        defect = np.zeros(2)
        for sign, fid in zip(elem.orientation, elem.face_ids):
            face = mesh.faces[fid]
            defect += sign * face.measure * face.normal
            report.min_face_ratio = min(report.min_face_ratio,
                                        face.diameter / elem.diameter)
        rel_defect = float(np.hypot(*defect)) / elem.diameter
        report.max_closure_defect = max(report.max_closure_defect, rel_defect)
        if rel_defect > 1e-12:
            report.violations.append(
                f"cell {elem.id}: face closure defect {rel_defect:.2e}")
        report.min_ball_ratio = min(report.min_ball_ratio,
                                    elem.ball_radius / elem.diameter)
        w = element_weight(elem)
        report.min_element_weight = min(report.min_element_weight, w)
        report.max_element_weight = max(report.max_element_weight, w)
    return report
