"""Independent reference computations used to freeze expected values.

Panel integrals use closed-form inner integrals over the trial triangle
(potential of a uniform triangle and its solid angle) and adaptive
QUADPACK integration over the test triangle. None of this shares code with
the package's quadrature.
"""

import math
from itertools import product

import numpy as np
from scipy.integrate import dblquad


def triangle_potential(x, tri):
    """Integral of 1/|x - y| over a flat triangle with uniform density."""
    x = np.asarray(x, float)
    P = np.asarray(tri, float)
    n = np.cross(P[1] - P[0], P[2] - P[0])
    n /= np.linalg.norm(n)
    d = float((x - P[0]) @ n)
    rho = x - d * n
    ad = abs(d)
    total = 0.0
    for a, b in ((P[0], P[1]), (P[1], P[2]), (P[2], P[0])):
        length = np.linalg.norm(b - a)
        lhat = (b - a) / length
        uhat = np.cross(lhat, n)
        p0 = float((a - rho) @ uhat)
        if abs(p0) < 1e-14 * length:
            continue
        lp = float((b - rho) @ lhat)
        lm = float((a - rho) @ lhat)
        r0sq = p0 * p0 + d * d
        rp = math.sqrt(r0sq + lp * lp)
        rm = math.sqrt(r0sq + lm * lm)
        total += p0 * math.log((rp + lp) / (rm + lm))
        if ad > 0:
            total -= ad * (math.atan(p0 * lp / (r0sq + ad * rp)) - math.atan(p0 * lm / (r0sq + ad * rm)))
    return total


def triangle_solid_angle(x, tri):
    """Integral of (x - y).n_y / |x - y|^3 over a flat triangle, n_y the
    right-hand normal of the vertex order."""
    a, b, c = (np.asarray(p, float) - np.asarray(x, float) for p in tri)
    la, lb, lc = np.linalg.norm(a), np.linalg.norm(b), np.linalg.norm(c)
    num = a @ np.cross(b, c)
    den = la * lb * lc + (a @ b) * lc + (a @ c) * lb + (b @ c) * la
    return -2.0 * math.atan2(num, den)


def integrate_over_triangle(f, tri, eps=1e-11):
    P = np.asarray(tri, float)
    e1, e2 = P[1] - P[0], P[2] - P[0]
    jac = np.linalg.norm(np.cross(e1, e2))
    val, _ = dblquad(lambda t, s: f(P[0] + s * e1 + t * e2), 0.0, 1.0, 0.0, lambda s: 1.0 - s,
                     epsabs=eps, epsrel=eps)
    return val * jac


def single_layer_pair(tri_x, tri_y):
    """Integral over both triangles of 1 / (4 pi |x - y|)."""
    return integrate_over_triangle(lambda x: triangle_potential(x, tri_y), tri_x) / (4 * math.pi)


def double_layer_pair(tri_x, tri_y):
    """Integral over both triangles of (x - y).n_y / (4 pi |x - y|^3)."""
    return integrate_over_triangle(lambda x: triangle_solid_angle(x, tri_y), tri_x) / (4 * math.pi)


def monomial_moment(a, b):
    """Integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def p1_mass_local(area):
    """Exact P1 x P1 element mass on a flat triangle."""
    return area / 12.0 * (np.ones((3, 3)) + np.eye(3))


def cube_surface_vertex_count(n):
    """Lattice points of {0..n}^3 with at least one coordinate on the boundary."""
    return sum(1 for p in product(range(n + 1), repeat=3) if any(c in (0, n) for c in p))
