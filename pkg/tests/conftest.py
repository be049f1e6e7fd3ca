import numpy as np
import pytest

from implicit_sampling.mesh import TriangleMesh, box_mesh, build_index, icosphere


def brute_point_triangle(P, corners, chunk=64):
    """Nearest distance from each point to any triangle, by plane projection.

    Deliberately different from the library's region classification: the
    point is projected onto each triangle's plane and kept if its
    barycentrics are non-negative, otherwise the nearest of the three
    clamped edge projections is used.
    """
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    out = np.empty(len(P))
    for s in range(0, len(P), chunk):
        p = P[s : s + chunk, None, :]
        h = np.einsum("qtj,tj->qt", p - a, n) / nn
        proj = p - h[..., None] * n
        # barycentrics via sub-triangle areas signed against n
        w0 = np.einsum("qtj,tj->qt", np.cross(c - b, proj - b), n)
        w1 = np.einsum("qtj,tj->qt", np.cross(a - c, proj - c), n)
        w2 = np.einsum("qtj,tj->qt", np.cross(b - a, proj - a), n)
        in_face = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        best = np.where(in_face, np.abs(h) * np.sqrt(nn), np.inf)
        for u, v in ((a, b), (b, c), (c, a)):
            e = v - u
            t = np.clip(np.einsum("qtj,tj->qt", p - u, e) / np.einsum("tj,tj->t", e, e), 0.0, 1.0)
            d = np.linalg.norm(p - (u + t[..., None] * e), axis=-1)
            best = np.minimum(best, d)
        out[s : s + chunk] = best.min(axis=1)
    return out


def cube_mesh(lo=-0.5, hi=0.5) -> TriangleMesh:
    return box_mesh(center=((lo + hi) / 2,) * 3, half_extents=((hi - lo) / 2,) * 3)


@pytest.fixture(scope="session")
def sphere_mesh():
    return icosphere(0.4, 4)


@pytest.fixture(scope="session")
def sphere_index(sphere_mesh):
    return build_index(sphere_mesh)


@pytest.fixture(scope="session")
def cube_index():
    return build_index(cube_mesh())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
