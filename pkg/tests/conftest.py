import numpy as np
import pytest

from brinkman2d import mesh as bmesh


@pytest.fixture(scope="session")
def sample_meshes():
    """Small meshes spanning the supported cell shapes."""
    return {
        "cartesian": bmesh.generate_cartesian(3),
        "perturbed": bmesh.generate_polygonal(3, "perturbed-quad", seed=4),
        "agglomerated": bmesh.generate_polygonal(4, "agglomerated"),
        "triangular": bmesh.generate_polygonal(3, "triangular"),
    }


@pytest.fixture(scope="session")
def mixed_cells(sample_meshes):
    """(mesh, element) pairs drawn from all families, 30 cells total."""
    pairs = []
    for key in ("cartesian", "perturbed", "agglomerated"):
        m = sample_meshes[key]
        pairs.extend((m, e) for e in m.elements)
    assert len(pairs) == 30
    return pairs


def triangle_monomial_integral(a, b, c, p, q):
    """Exact integral of x^p y^q over the triangle (a, b, c).

    Affine map to the unit simplex plus the factorial formula
    int u^i v^j du dv = i! j! / (i + j + 2)!; expansion by trinomials.
    """
    from math import factorial

    def trinomial(c0, c1, c2, n):
        out = {}
        for i in range(n + 1):
            for j in range(n - i + 1):
                k = n - i - j
                coef = factorial(n) / (factorial(i) * factorial(j) * factorial(k))
                out[(i, j)] = out.get((i, j), 0.0) + coef * c0**k * c1**i * c2**j
        return out

    jac = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    X = trinomial(a[0], b[0] - a[0], c[0] - a[0], p)
    Y = trinomial(a[1], b[1] - a[1], c[1] - a[1], q)
    total = 0.0
    for (i1, j1), cx in X.items():
        for (i2, j2), cy in Y.items():
            i, j = i1 + i2, j1 + j2
            total += cx * cy * factorial(i) * factorial(j) / factorial(i + j + 2)
    return total * jac


def polygon_monomial_integral(coords, anchor, p, q):
    """Exact integral of x^p y^q over a star-shaped polygon via its fan."""
    total = 0.0
    n = coords.shape[0]
    for i in range(n):
        total += triangle_monomial_integral(
            anchor, coords[i], coords[(i + 1) % n], p, q)
    return total


def segment_monomial_integral(p0, p1, p, q):
    """Exact line integral of x^p y^q over the segment [p0, p1]."""
    from math import comb

    length = float(np.hypot(*(np.asarray(p1) - np.asarray(p0))))
    # x(t) = p0x + t dx, expand both powers binomially, integrate t^k.
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    total = 0.0
    for i in range(p + 1):
        for j in range(q + 1):
            coef = comb(p, i) * p0[0]**(p - i) * dx**i \
                * comb(q, j) * p0[1]**(q - j) * dy**j
            total += coef / (i + j + 1)
    return total * length
