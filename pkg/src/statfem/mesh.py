"""Interval and triangle meshes, the mesh text format, and point location."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import InvalidArgumentError, MeshParseError, PointNotFoundError

_NODES_PER_ELEMENT = {1: 2, 2: 3}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Linear simplex mesh with Dirichlet nodes eliminated from the DOF numbering.

    Attributes:
        dimension: 1 (2-node segments) or 2 (3-node triangles).
        nodes: (n_n, dimension) coordinates.
        elements: (n_e, dimension + 1) node indices.
        dirichlet_nodes: clamped node indices.
        free_dof_map: node index -> contiguous free-DOF index.
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    dirichlet_nodes: frozenset = frozenset()
    free_dof_map: dict = field(init=False)

    def __post_init__(self):
        if self.dimension not in _NODES_PER_ELEMENT:
            raise InvalidArgumentError(f"dimension must be 1 or 2, got {self.dimension}")
        nodes = np.array(self.nodes, dtype=float).reshape(-1, self.dimension)
        elements = np.array(self.elements, dtype=np.int64).reshape(
            -1, _NODES_PER_ELEMENT[self.dimension])
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise InvalidArgumentError("element references a node that does not exist")
        dirichlet = frozenset(int(i) for i in self.dirichlet_nodes)
        if any(i < 0 or i >= len(nodes) for i in dirichlet):
            raise InvalidArgumentError("Dirichlet node index out of range")
        measures = _element_measures(self.dimension, nodes, elements)
        if np.any(measures <= 0.0):
            bad = int(np.argmin(measures))
            raise InvalidArgumentError(f"element {bad} is degenerate (measure {measures[bad]:.3g})")
        nodes.setflags(write=False)
        elements.setflags(write=False)
        free = [i for i in range(len(nodes)) if i not in dirichlet]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "dirichlet_nodes", dirichlet)
        object.__setattr__(self, "free_dof_map", {n: k for k, n in enumerate(free)})
        object.__setattr__(self, "_measures", measures)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_free(self) -> int:
        return len(self.free_dof_map)

    @property
    def free_nodes(self) -> np.ndarray:
        return np.array(sorted(self.free_dof_map, key=self.free_dof_map.get), dtype=np.int64)

    @property
    def free_index(self) -> np.ndarray:
        """Free-DOF index per node, -1 on Dirichlet nodes."""
        idx = -np.ones(self.n_nodes, dtype=np.int64)
        for node, k in self.free_dof_map.items():
            idx[node] = k
        return idx

    def element_measures(self) -> np.ndarray:
        return self._measures.copy()

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def min_edge_length(self) -> float:
        el = self.elements
        k = el.shape[1]
        lengths = [np.linalg.norm(self.nodes[el[:, i]] - self.nodes[el[:, (i + 1) % k]], axis=1)
                   for i in range(k if k > 2 else 1)]
        return float(np.min(np.concatenate(lengths)))

    def same_as(self, other: "Mesh") -> bool:
        return (self.dimension == other.dimension
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.elements, other.elements)
                and self.dirichlet_nodes == other.dirichlet_nodes)


def _element_measures(dim, nodes, elements):
    if len(elements) == 0:
        return np.zeros(0)
    if dim == 1:
        return nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0]
    p0, p1, p2 = (nodes[elements[:, i]] for i in range(3))
    e1, e2 = p1 - p0, p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_interval_mesh(length: float, n_elements: int, clamp_left: bool = True) -> Mesh:
    """Uniform mesh of [0, length]; node 0 is Dirichlet when ``clamp_left``."""
    if not length > 0:
        raise InvalidArgumentError(f"length must be positive, got {length}")
    if int(n_elements) < 1:
        raise InvalidArgumentError(f"need at least one element, got {n_elements}")
    n = int(n_elements)
    nodes = np.linspace(0.0, float(length), n + 1)[:, None]
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(1, nodes, elements, frozenset({0}) if clamp_left else frozenset())


def build_plate_with_hole(lx: float = 2.0, ly: float = 2.0, radius: float = 0.2,
                          center: tuple = (1.0, 1.0), n_cells: int = 18,
                          n_ring: int = 16, n_layers: int = 2) -> Mesh:
    """Triangulate the rectangle [0, lx] x [0, ly] minus a disk.

    Points come from ``n_layers`` concentric rings of ``n_ring`` nodes around the
    hole and a structured grid of ``n_cells`` intervals across the shorter side
    everywhere else; the left edge x = 0 is clamped. The hole boundary is the
    inscribed ``n_ring``-gon.
    """
    if not (radius > 0 and lx > 0 and ly > 0):
        raise InvalidArgumentError("plate dimensions and hole radius must be positive")
    cx, cy = center
    if not (radius < cx < lx - radius and radius < cy < ly - radius):
        raise InvalidArgumentError("hole must lie strictly inside the plate")
    h = min(lx, ly) / n_cells
    nx, ny = max(1, round(lx / h)), max(1, round(ly / h))
    gx, gy = np.meshgrid(np.linspace(0.0, lx, nx + 1), np.linspace(0.0, ly, ny + 1))
    grid = np.column_stack([gx.ravel(), gy.ravel()])

    dr = 2.0 * math.pi * radius / n_ring
    ring_pts = []
    for layer in range(n_layers + 1):
        r = radius + layer * dr * (1.0 + 0.25 * layer)
        offset = 0.5 * layer * (2.0 * math.pi / n_ring)
        theta = offset + 2.0 * math.pi * np.arange(n_ring) / n_ring
        ring_pts.append(np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)]))
    r_outer = radius + n_layers * dr * (1.0 + 0.25 * n_layers)
    keep = np.hypot(grid[:, 0] - cx, grid[:, 1] - cy) > r_outer + 0.6 * h
    pts = np.vstack([grid[keep]] + ring_pts)

    tri = Delaunay(pts)
    simplices = tri.simplices
    cent = pts[simplices].mean(axis=1)
    simplices = simplices[np.hypot(cent[:, 0] - cx, cent[:, 1] - cy) > radius]
    used = np.unique(simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = pts[used]
    elements = remap[simplices]
    # counter-clockwise orientation
    p0, p1, p2 = (nodes[elements[:, i]] for i in range(3))
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    flip = cross < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    clamped = frozenset(int(i) for i in np.flatnonzero(np.abs(nodes[:, 0]) < 1e-12))
    return Mesh(2, nodes, elements, clamped)


def plate_with_hole_area(lx, ly, radius, n_ring):
    """Exact area of the rectangle minus the inscribed ``n_ring``-gon."""
    return lx * ly - 0.5 * n_ring * radius ** 2 * math.sin(2.0 * math.pi / n_ring)


def edge_submesh(mesh: Mesh, axis: int, value: float, tol: float = 1e-9):
    """1D mesh of the boundary nodes lying on the line ``x[axis] == value``.

    Returns the interval mesh (coordinates along the other axis, no Dirichlet
    nodes) and the parent node index of each of its nodes.
    """
    if mesh.dimension != 2:
        raise InvalidArgumentError("edge extraction needs a 2D mesh")
    on = np.flatnonzero(np.abs(mesh.nodes[:, axis] - value) < tol)
    if len(on) < 2:
        raise InvalidArgumentError(f"fewer than two nodes on the line x[{axis}] = {value}")
    other = 1 - axis
    on = on[np.argsort(mesh.nodes[on, other])]
    coords = mesh.nodes[on, other][:, None]
    n = len(on)
    sub = Mesh(1, coords, np.column_stack([np.arange(n - 1), np.arange(1, n)]))
    return sub, on


def locate_point(mesh: Mesh, point, tol: float = 1e-10):
    """Find the element containing ``point`` and its basis-function weights.

    Scans every element; when the point sits on a shared edge or node the
    element with the largest minimum weight wins.
    """
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (mesh.dimension,):
        raise InvalidArgumentError(f"point must have {mesh.dimension} coordinates")
    weights = _barycentric_all(mesh, p)
    score = weights.min(axis=1)
    best = int(np.argmax(score))
    if score[best] < -tol:
        raise PointNotFoundError(f"point {tuple(p)} lies outside the mesh")
    w = weights[best]
    w = np.where(w < 0.0, 0.0, w)
    w = w / w.sum()
    return best, w


def _barycentric_all(mesh, p):
    el = mesh.elements
    if mesh.dimension == 1:
        x0 = mesh.nodes[el[:, 0], 0]
        x1 = mesh.nodes[el[:, 1], 0]
        t = (p[0] - x0) / (x1 - x0)
        return np.column_stack([1.0 - t, t])
    a, b, c = (mesh.nodes[el[:, i]] for i in range(3))
    v0, v1, v2 = b - a, c - a, p - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def dumps_mesh(mesh: Mesh) -> str:
    out = io.StringIO()
    out.write(f"dim {mesh.dimension}\n")
    out.write(f"nodes {mesh.n_nodes}\n")
    for row in mesh.nodes:
        out.write(" ".join(repr(float(x)) for x in row) + "\n")
    out.write(f"elements {mesh.n_elements}\n")
    for row in mesh.elements:
        out.write(" ".join(str(int(i)) for i in row) + "\n")
    out.write(f"dirichlet {len(mesh.dirichlet_nodes)}\n")
    for i in sorted(mesh.dirichlet_nodes):
        out.write(f"{i}\n")
    return out.getvalue()


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_mesh(mesh))


def load_mesh(text) -> Mesh:
    """Parse the line-oriented mesh format (``str``, ``bytes`` or a text stream)."""
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(f"expected '{name}' section, reached end of input",
                                 lines[-1][0] if lines else None)
        lineno, tok = lines[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", lineno) from None
        if count < 0:
            raise MeshParseError("negative count", lineno)
        pos += 1
        return count, lineno

    def rows(count, width, kind, section_line):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                raise MeshParseError("unexpected end of input", section_line)
            lineno, tok = lines[pos]
            if len(tok) != width:
                raise MeshParseError(f"expected {width} values, got {len(tok)}", lineno)
            try:
                out.append(([kind(t) for t in tok], lineno))
            except ValueError:
                raise MeshParseError(f"cannot parse {' '.join(tok)!r}", lineno) from None
            pos += 1
        return out

    dim, dim_line = header("dim")
    if dim not in _NODES_PER_ELEMENT:
        raise MeshParseError(f"unsupported dimension {dim}", dim_line)
    n_nodes, nl = header("nodes")
    node_rows = rows(n_nodes, dim, float, nl)
    n_el, el_line = header("elements")
    el_rows = rows(n_el, _NODES_PER_ELEMENT[dim], int, el_line)
    n_dir, dl = header("dirichlet")
    dir_rows = rows(n_dir, 1, int, dl)
    if pos != len(lines):
        raise MeshParseError("trailing content after dirichlet section", lines[pos][0])

    nodes = np.array([r for r, _ in node_rows], dtype=float).reshape(-1, dim)
    for idx, lineno in el_rows:
        if any(i < 0 or i >= n_nodes for i in idx):
            raise MeshParseError(f"node index out of range (have {n_nodes} nodes)", lineno)
    for (i,), lineno in dir_rows:
        if i < 0 or i >= n_nodes:
            raise MeshParseError(f"Dirichlet node {i} out of range", lineno)
    elements = np.array([r for r, _ in el_rows], dtype=np.int64).reshape(-1, dim + 1)
    if len(elements):
        measures = _element_measures(dim, nodes, elements)
        # accept reversed orientation by reordering
        neg = measures < 0
        elements[neg] = elements[neg][:, [0, 2, 1] if dim == 2 else [1, 0]]
        measures = np.abs(measures)
        for k, (m, (_, lineno)) in enumerate(zip(measures, el_rows)):
            if m <= 0.0:
                raise MeshParseError(f"degenerate element {k}", lineno)
    return Mesh(dim, nodes, elements, frozenset(i for (i,), _ in dir_rows))
