"""Mesh types, JSON I/O and benchmark plate generators.

Meshes are plain 2D node/element containers.  Seed notches are modelled as
zero-width slits: the nodes along a slit line are duplicated so the elements
above the line reference a different copy than the elements below, which
leaves the two crack faces free to separate.  The slit polylines are kept on
the mesh so downstream rendering can mark them.

Benchmark plates
----------------
snt-struct    50 x 50 mm plate, 43 x 32 bilinear quads (1376 elements),
              horizontal edge notch at mid height.
snt-unstruct  same plate, 113 x 38 jittered grid split into 8588 triangles.
sdnt          137 x 13 mm strip, 137k x 13k quads for k = 1, 2, 3
              (1781 / 7124 / 16029 elements), edge notches left and right
              on the same line.
adnt          like sdnt but the notch lines are offset vertically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

QUAD = "quad"
TRIANGLE = "triangle"

_NODES_PER_FAMILY = {QUAD: 4, TRIANGLE: 3}

PROBLEMS = ("snt-struct", "snt-unstruct", "sdnt", "adnt")
REFINEMENTS = ("coarse", "mid", "fine")

# deterministic jitter for the unstructured variant; the mesh must be
# identical between runs, so this is not a configuration value
_JITTER_SEED = 8241


@dataclass
class Element:
    """Single finite element: a family tag plus connectivity node ids."""

    family: str
    conn: np.ndarray

    def __post_init__(self):
        self.conn = np.asarray(self.conn, dtype=np.int64)
        want = _NODES_PER_FAMILY.get(self.family)
        if want is None:
            raise ValueError(f"unknown element family '{self.family}'")
        if self.conn.shape != (want,):
            raise ValueError(
                f"{self.family} element needs {want} nodes, got {self.conn.shape}")


@dataclass
class DirichletSet:
    """Nodes with one prescribed displacement component (value at full load)."""

    nodes: np.ndarray
    dof: str  # "x" or "y"
    value: float

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        if self.dof not in ("x", "y"):
            raise ValueError(f"dirichlet dof must be 'x' or 'y', got '{self.dof}'")


@dataclass
class NeumannSet:
    """Edges (node id pairs) carrying a constant traction vector."""

    edges: np.ndarray
    traction: tuple[float, float]

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)


@dataclass
class Slit:
    """Zero-width crack: geometric segment plus the duplicated node pairs."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    node_pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class LoadProgram:
    """Displacement-controlled load path in terms of a scalar load factor.

    Prescribed values on the mesh are the full-load values; at load factor t
    the solver applies t * value.  The step controller halves the step on a
    failed increment and terminates the analysis once it cannot stay at or
    above ``min_step``.
    """

    initial_step: float = 0.02
    min_step: float = 1.0e-4
    max_load: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.initial_step <= self.max_load):
            raise ValueError("initial_step must lie in (0, max_load]")
        if self.min_step <= 0.0:
            raise ValueError("min_step must be positive")


class Mesh:
    """2D mesh with named boundary sets and optional slit metadata.

    Parameters
    ----------
    nodes : (n, 2) float array
        Node coordinates in mm.
    elements : list of Element
        Connectivity; node ids index into ``nodes``.
    dirichlet_sets, neumann_sets : dict
        Named boundary condition sets.
    slits : list of Slit
        Zero-width cracks built by node duplication.
    """

    def __init__(self, nodes, elements, dirichlet_sets=None, neumann_sets=None,
                 slits=None):
        self.nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 2)
        self.elements = list(elements)
        self.dirichlet_sets = dict(dirichlet_sets or {})
        self.neumann_sets = dict(neumann_sets or {})
        self.slits = list(slits or [])
        self.validate()

    # -- basic measures ------------------------------------------------

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    def bounding_box(self):
        """(xmin, ymin, xmax, ymax) over all nodes."""
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return (lo[0], lo[1], hi[0], hi[1])

    def family_blocks(self):
        """Group elements by family: {family: (element ids, conn matrix)}."""
        out = {}
        for fam in (QUAD, TRIANGLE):
            ids = [i for i, e in enumerate(self.elements) if e.family == fam]
            if ids:
                conn = np.stack([self.elements[i].conn for i in ids])
                out[fam] = (np.asarray(ids, dtype=np.int64), conn)
        return out

    # -- validation ----------------------------------------------------

    def validate(self):
        if self.n_nodes == 0 or self.n_elements == 0:
            raise ValueError("mesh needs at least one node and one element")
        if not np.all(np.isfinite(self.nodes)):
            raise ValueError("non-finite node coordinates")
        n = self.n_nodes
        for i, e in enumerate(self.elements):
            if e.conn.min() < 0 or e.conn.max() >= n:
                raise ValueError(f"element {i} references a node id outside 0..{n - 1}")
            if len(set(e.conn.tolist())) != len(e.conn):
                raise ValueError(f"element {i} repeats a node")
        self._check_orientation()
        self._check_duplicate_coords()
        for name, ds in self.dirichlet_sets.items():
            if ds.nodes.min(initial=0) < 0 or ds.nodes.max(initial=0) >= n:
                raise ValueError(f"dirichlet set '{name}' references unknown nodes")

    def _check_orientation(self):
        """All elements must be positively oriented (CCW, positive area)."""
        xy = self.nodes
        for i, e in enumerate(self.elements):
            p = xy[e.conn]
            # shoelace; for quads this also rejects bow-tie orderings
            x, y = p[:, 0], p[:, 1]
            area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            if area <= 0.0:
                raise ValueError(f"element {i} has non-positive area {area:g}")

    def _check_duplicate_coords(self, tol=1.0e-9):
        """Reject coincident nodes unless they form a registered slit pair."""
        allowed = set()
        for slit in self.slits:
            for a, b in slit.node_pairs:
                allowed.add((min(a, b), max(a, b)))
        key = np.round(self.nodes / tol).astype(np.int64)
        seen = {}
        for i, k in enumerate(map(tuple, key)):
            if k in seen:
                j = seen[k]
                if (min(i, j), max(i, j)) not in allowed:
                    raise ValueError(
                        f"nodes {j} and {i} coincide but are not a slit pair")
            else:
                seen[k] = i


# ----------------------------------------------------------------------
# JSON interchange
# ----------------------------------------------------------------------

def mesh_to_json(mesh, path=None):
    """Serialize a mesh to the interchange dict (optionally write a file)."""
    doc = {
        "nodes": [[float(x), float(y)] for x, y in mesh.nodes],
        "elements": [{"family": e.family, "conn": e.conn.tolist()}
                     for e in mesh.elements],
        "dirichlet": [
            {"name": name, "nodes": ds.nodes.tolist(), "dof": ds.dof,
             "value": float(ds.value)}
            for name, ds in mesh.dirichlet_sets.items()
        ],
        "neumann": [
            {"name": name, "edges": ns.edges.tolist(),
             "traction": [float(ns.traction[0]), float(ns.traction[1])]}
            for name, ns in mesh.neumann_sets.items()
        ],
    }
    if mesh.slits:
        doc["slits"] = [
            {"p0": [float(s.p0[0]), float(s.p0[1])],
             "p1": [float(s.p1[0]), float(s.p1[1])],
             "pairs": [[int(a), int(b)] for a, b in s.node_pairs]}
            for s in mesh.slits
        ]
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh)
    return doc


def mesh_from_json(source):
    """Load a mesh from an interchange dict, JSON string or file path."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        doc = json.loads(source)
    else:
        with open(source) as fh:
            doc = json.load(fh)
    for key in ("nodes", "elements"):
        if key not in doc:
            raise ValueError(f"mesh document is missing '{key}'")
    elements = [Element(e["family"], e["conn"]) for e in doc["elements"]]
    dirichlet = {}
    for i, d in enumerate(doc.get("dirichlet", [])):
        name = d.get("name", f"dirichlet_{i}")
        dirichlet[name] = DirichletSet(d["nodes"], d["dof"], d["value"])
    neumann = {}
    for i, nm in enumerate(doc.get("neumann", [])):
        name = nm.get("name", f"neumann_{i}")
        neumann[name] = NeumannSet(nm["edges"], tuple(nm["traction"]))
    slits = [Slit(tuple(s["p0"]), tuple(s["p1"]),
                  [(int(a), int(b)) for a, b in s.get("pairs", [])])
             for s in doc.get("slits", [])]
    return Mesh(doc["nodes"], elements, dirichlet, neumann, slits)


# ----------------------------------------------------------------------
# structured grid with slits
# ----------------------------------------------------------------------

class _GridBuilder:
    """Tensor grid of (nx x ny) cells with horizontal slits on grid lines.

    A slit at node row r over a set of columns duplicates those nodes; cells
    in cell-row r (above the line) reference the duplicate, cells in row
    r - 1 the original, so the faces can separate while the line stays
    geometrically closed at the tip.
    """

    def __init__(self, nx, ny, width, height):
        self.nx, self.ny = nx, ny
        self.width, self.height = width, height
        xs = np.linspace(0.0, width, nx + 1)
        ys = np.linspace(0.0, height, ny + 1)
        self.base_id = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
        gx, gy = np.meshgrid(xs, ys)  # row-major, row 0 at the bottom
        self.coords = np.column_stack([gx.ravel(), gy.ravel()])
        self.upper_id = self.base_id.copy()
        self.slits = []

    def add_slit(self, row, cols, tip_col):
        """Duplicate nodes (row, c) for c in cols; record segment to tip_col."""
        pairs = []
        extra = []
        next_id = self.coords.shape[0]
        for c in cols:
            orig = self.base_id[row, c]
            dup = next_id
            next_id += 1
            extra.append(self.coords[orig])
            self.upper_id[row, c] = dup
            pairs.append((int(orig), int(dup)))
        self.coords = np.vstack([self.coords, np.array(extra)])
        y = float(self.coords[self.base_id[row, cols[0]], 1])
        xs = [float(self.coords[self.base_id[row, c], 0]) for c in (*cols, tip_col)]
        self.slits.append(Slit((min(xs), y), (max(xs), y), pairs))

    def cell_corners(self, i, j):
        """Node ids (bl, br, tr, tl) of cell (col i, row j), slit-aware."""
        bl = self.upper_id[j, i]       # bottom nodes seen from above a slit
        br = self.upper_id[j, i + 1]
        tr = self.base_id[j + 1, i + 1]  # top nodes seen from below
        tl = self.base_id[j + 1, i]
        return bl, br, tr, tl

    def jitter_interior(self, amplitude, frozen_rows):
        """Deterministically perturb interior nodes not on boundary/slit rows."""
        rng = np.random.default_rng(_JITTER_SEED)
        dx = self.width / self.nx
        dy = self.height / self.ny
        amp = amplitude * min(dx, dy)
        for r in range(1, self.ny):
            if r in frozen_rows:
                continue
            for c in range(1, self.nx):
                nid = self.base_id[r, c]
                self.coords[nid] += rng.uniform(-amp, amp, size=2)

    def boundary_rows(self):
        return {"bottom": self.base_id[0, :].copy(), "top": self.base_id[-1, :].copy()}


def _plate_mesh(nx, ny, width, height, slit_spec, family, jitter=0.0):
    """Build the benchmark plate.

    slit_spec: list of (row, duplicated cols, tip col).
    family: QUAD keeps the cells, TRIANGLE splits each cell along its
    shorter diagonal (after jitter).
    """
    g = _GridBuilder(nx, ny, width, height)
    for row, cols, tip in slit_spec:
        g.add_slit(row, cols, tip)
    if jitter:
        frozen = {row for row, _, _ in slit_spec}
        g.jitter_interior(jitter, frozen)

    elements = []
    for j in range(ny):
        for i in range(nx):
            bl, br, tr, tl = g.cell_corners(i, j)
            if family == QUAD:
                elements.append(Element(QUAD, [bl, br, tr, tl]))
            else:
                p = g.coords
                diag_a = np.hypot(*(p[tr] - p[bl]))
                diag_b = np.hypot(*(p[tl] - p[br]))
                if diag_a <= diag_b:
                    elements.append(Element(TRIANGLE, [bl, br, tr]))
                    elements.append(Element(TRIANGLE, [bl, tr, tl]))
                else:
                    elements.append(Element(TRIANGLE, [bl, br, tl]))
                    elements.append(Element(TRIANGLE, [br, tr, tl]))

    rows = g.boundary_rows()
    return g, elements, rows


def _tension_sets(rows, base_id, u_bar):
    """Prescribed tension: top/bottom faces pulled apart, left corners pinned."""
    pins = np.array([base_id[0, 0], base_id[-1, 0]])
    return {
        "bottom": DirichletSet(rows["bottom"], "y", -u_bar),
        "top": DirichletSet(rows["top"], "y", u_bar),
        "pin_left": DirichletSet(pins, "x", 0.0),
    }


def generate_benchmark_mesh(problem, refinement="coarse"):
    """Generate one of the notched tension plates.

    Parameters
    ----------
    problem : str
        One of ``snt-struct``, ``snt-unstruct``, ``sdnt``, ``adnt``.
    refinement : str
        ``coarse``, ``mid`` or ``fine``.  The single-notch plates come in
        one size only and accept just ``coarse``.

    Returns
    -------
    Mesh
        Plate with slits, tension boundary sets and left-corner pins.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem '{problem}', expected one of {PROBLEMS}")
    if refinement not in REFINEMENTS:
        raise ValueError(f"unknown refinement '{refinement}'")

    if problem in ("snt-struct", "snt-unstruct"):
        if refinement != "coarse":
            raise ValueError(
                f"{problem} has a single mesh size; use refinement='coarse'")
        if problem == "snt-struct":
            nx, ny, u_bar = 43, 32, 0.0036
            slits = [(16, list(range(0, 22)), 22)]  # edge notch to ~mid width
            g, elements, rows = _plate_mesh(nx, ny, 50.0, 50.0, slits, QUAD)
        else:
            nx, ny, u_bar = 113, 38, 0.0036
            slits = [(19, list(range(0, 57)), 57)]
            g, elements, rows = _plate_mesh(nx, ny, 50.0, 50.0, slits, TRIANGLE,
                                            jitter=0.2)
    else:
        k = {"coarse": 1, "mid": 2, "fine": 3}[refinement]
        nx, ny = 137 * k, 13 * k
        u_bar = 0.0035
        if problem == "sdnt":
            left_row = right_row = 7 * k
        else:  # adnt: vertically offset notch lines
            left_row, right_row = 9 * k, 4 * k
        left = (left_row, list(range(0, 52 * k)), 52 * k)
        right = (right_row, list(range(85 * k + 1, nx + 1)), 85 * k)
        g, elements, rows = _plate_mesh(nx, ny, 137.0, 13.0, [left, right], QUAD)

    dirichlet = _tension_sets(rows, g.base_id, u_bar)
    return Mesh(g.coords, elements, dirichlet, {}, g.slits)
