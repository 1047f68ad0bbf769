"""OFF mesh parsing and area-weighted surface sampling."""

from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud


class OffParseError(ValueError):
    """OFF syntax or consistency error, annotated with the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (v, 3) float64
    faces: np.ndarray  # (f, 3) int64, already triangulated

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def parse_off(text: str) -> TriangleMesh:
    """Parse OFF text into a triangle mesh; polygon faces are fan-triangulated.

    Handles the common ModelNet quirk of counts glued to the header
    ("OFF490 518 0"). Blank lines and '#' comments are skipped.
    """
    lines = text.splitlines()
    # Iterate (lineno, tokens) over non-blank, non-comment lines.
    content = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            content.append((lineno, stripped))
    if not content:
        raise OffParseError(1, "missing OFF header")

    lineno, header = content[0]
    pos = 1
    if header == "OFF":
        if pos >= len(content):
            raise OffParseError(lineno, "missing counts line after OFF header")
        counts_lineno, counts_line = content[pos]
        pos += 1
    elif header.startswith("OFF"):
        counts_lineno, counts_line = lineno, header[3:].strip()
    else:
        raise OffParseError(lineno, "missing OFF header")

    counts = counts_line.split()
    if len(counts) < 2:
        raise OffParseError(counts_lineno, "counts line must give vertex and face counts")
    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
    except ValueError:
        raise OffParseError(counts_lineno, f"non-numeric count in {counts_line!r}") from None

    if len(content) - pos < n_vertices:
        short_lineno = content[-1][0] if content else counts_lineno
        raise OffParseError(short_lineno, f"expected {n_vertices} vertex lines")
    vertices = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        vlineno, line = content[pos]
        pos += 1
        parts = line.split()
        if len(parts) < 3:
            raise OffParseError(vlineno, f"vertex line needs 3 coordinates: {line!r}")
        try:
            vertices[i] = [float(p) for p in parts[:3]]
        except ValueError:
            raise OffParseError(vlineno, f"non-numeric vertex coordinate in {line!r}") from None

    if len(content) - pos < n_faces:
        short_lineno = content[-1][0] if content else counts_lineno
        raise OffParseError(short_lineno, f"expected {n_faces} face lines, found {len(content) - pos}")
    triangles = []
    for _ in range(n_faces):
        flineno, line = content[pos]
        pos += 1
        parts = line.split()
        try:
            k = int(parts[0])
        except (ValueError, IndexError):
            raise OffParseError(flineno, f"face line must start with a vertex count: {line!r}") from None
        if k < 3:
            raise OffParseError(flineno, f"face needs at least 3 vertices, got {k}")
        if len(parts) < 1 + k:
            raise OffParseError(flineno, f"face declares {k} vertices but lists {len(parts) - 1}")
        try:
            idx = [int(p) for p in parts[1 : 1 + k]]
        except ValueError:
            raise OffParseError(flineno, f"non-numeric face index in {line!r}") from None
        for j in idx:
            if j < 0 or j >= n_vertices:
                raise OffParseError(flineno, f"face index {j} out of range (vertices: {n_vertices})")
        # Fan triangulation around the first vertex, deterministic order.
        for t in range(1, k - 1):
            triangles.append((idx[0], idx[t], idx[t + 1]))

    faces = np.array(triangles, dtype=np.int64) if triangles else np.empty((0, 3), dtype=np.int64)
    return TriangleMesh(vertices, faces)


def load_off(path) -> TriangleMesh:
    with open(path) as fh:
        return parse_off(fh.read())


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Draw n area-weighted uniform samples from the mesh surface."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas) / total
    tri = np.searchsorted(cdf, rng.random(n), side="right")
    tri = np.minimum(tri, len(areas) - 1)
    a = mesh.vertices[mesh.faces[tri, 0]]
    b = mesh.vertices[mesh.faces[tri, 1]]
    c = mesh.vertices[mesh.faces[tri, 2]]
    u = rng.random((n, 1))
    v = rng.random((n, 1))
    over = (u + v) > 1.0
    u = np.where(over, 1.0 - u, u)
    v = np.where(over, 1.0 - v, v)
    pts = a + u * (b - a) + v * (c - a)
    return PointCloud(pts)
