"""Vectorized assembly of damaged-elasticity stiffness and residuals.

All element geometry factors are precomputed once per mesh: the secant
stiffness of element e is sum_g (1 - dbar_eg) * M_eg with the constant
M_eg = w_g |J| B^T C B, so every reassembly during the nonlinear loop is
a scaled sum over cached arrays.  Internal forces reuse the same scaled
element matrices, K_e(u) = f_int,e, which is exact for the secant law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .constitutive import elasticity_matrix
from .elements import gauss_rule, shape_gradients, shape_values
from .mesh import QUAD, TRIANGLE


@dataclass
class FamilyBatch:
    """Precomputed per-element quantities for one element family."""

    family: str
    elem_ids: np.ndarray   # (ne,) ids into mesh.elements
    conn: np.ndarray       # (ne, nn) node ids
    dofs: np.ndarray       # (ne, 2 nn)
    B: np.ndarray          # (ne, ngp, 3, 2 nn)
    wdetj: np.ndarray      # (ne, ngp)
    M: np.ndarray          # (ne, ngp, 2 nn, 2 nn), w |J| B^T C B
    gauss_xy: np.ndarray   # (ne, ngp, 2)
    gp_ids: np.ndarray     # (ne, ngp) global gauss point ids
    N: np.ndarray          # (ngp, nn) shape values at the gauss points

    @property
    def n_elements(self):
        return self.conn.shape[0]

    @property
    def n_gauss(self):
        return self.wdetj.shape[1]

    def coo_pattern(self):
        nn2 = self.dofs.shape[1]
        rows = np.repeat(self.dofs, nn2, axis=1).ravel()
        cols = np.tile(self.dofs, nn2).ravel()
        return rows, cols

    def take(self, sel, conn=None):
        """Subset of the batch; optionally with remapped connectivity."""
        conn = self.conn[sel] if conn is None else conn
        dofs = _dof_table(conn)
        return FamilyBatch(self.family, self.elem_ids[sel], conn, dofs,
                           self.B[sel], self.wdetj[sel], self.M[sel],
                           self.gauss_xy[sel], self.gp_ids[sel], self.N)


def _dof_table(conn):
    dofs = np.empty((conn.shape[0], 2 * conn.shape[1]), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    return dofs


def _build_batch(family, elem_ids, conn, xy, C, gp_offset):
    pts, w = gauss_rule(family)
    N = np.stack([shape_values(family, p) for p in pts])
    dN = np.stack([shape_gradients(family, p) for p in pts])  # (ngp, nn, 2)
    X = xy[conn]                                              # (ne, nn, 2)
    J = np.einsum("gak,eal->egkl", dN, X)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0.0):
        bad = elem_ids[np.argwhere(det <= 0.0)[0][0]]
        raise ValueError(f"element {bad} has a non-positive Jacobian")
    invJ = np.empty_like(J)
    invJ[..., 0, 0] = J[..., 1, 1]
    invJ[..., 0, 1] = -J[..., 0, 1]
    invJ[..., 1, 0] = -J[..., 1, 0]
    invJ[..., 1, 1] = J[..., 0, 0]
    invJ /= det[..., None, None]
    grad = np.einsum("eglk,gak->egal", invJ, dN)              # d/dx_l
    ne, ngp, nn = grad.shape[0], grad.shape[1], grad.shape[2]
    B = np.zeros((ne, ngp, 3, 2 * nn))
    B[..., 0, 0::2] = grad[..., 0]
    B[..., 1, 1::2] = grad[..., 1]
    B[..., 2, 0::2] = grad[..., 1]
    B[..., 2, 1::2] = grad[..., 0]
    wdetj = det * w[None, :]
    M = np.einsum("egki,kl,eglj->egij", B, C, B, optimize=True)
    M *= wdetj[..., None, None]
    gauss_xy = np.einsum("ga,eal->egl", N, X)
    gp_ids = gp_offset + np.arange(ne * ngp, dtype=np.int64).reshape(ne, ngp)
    return FamilyBatch(family, elem_ids, conn, _dof_table(conn), B, wdetj, M,
                       gauss_xy, gp_ids, N)


class Operators:
    """Assembly operators for a mesh and a single material.

    The object caches everything that depends on geometry only; damage
    enters as a per-gauss-point scale (1 - dbar) at assembly time.
    """

    def __init__(self, mesh, params):
        self.mesh = mesh
        self.params = params
        self.n_dofs = mesh.n_dofs
        C = elasticity_matrix(params)
        self.batches = []
        offset = 0
        for family, (eids, conn) in mesh.family_blocks().items():
            batch = _build_batch(family, eids, conn, mesh.nodes, C, offset)
            offset += batch.n_elements * batch.n_gauss
            self.batches.append(batch)
        self.n_gauss = offset
        self.gauss_xy = np.empty((offset, 2))
        self.gauss_w = np.empty(offset)
        for b in self.batches:
            self.gauss_xy[b.gp_ids.ravel()] = b.gauss_xy.reshape(-1, 2)
            self.gauss_w[b.gp_ids.ravel()] = b.wdetj.ravel()
        self._projection = None
        # element id -> damage scale lookup needs the element->gauss map
        self.elem_gp_ids = {}
        for b in self.batches:
            for row, eid in enumerate(b.elem_ids):
                self.elem_gp_ids[int(eid)] = b.gp_ids[row]

    # -- strain / force / stiffness -------------------------------------

    def strains(self, u):
        """Voigt strains at every gauss point, shape (n_gauss, 3).

        On a restricted clone only the gauss points of the retained
        elements are written; the rest stay zero.
        """
        out = np.zeros((self.n_gauss, 3))
        for b in self.batches:
            out[b.gp_ids] = np.einsum("egij,ej->egi", b.B, u[b.dofs])
        return out

    def restricted(self, batches, n_dofs):
        """Shallow clone over a subset of (possibly remapped) batches.

        Gauss point ids keep their global numbering so state arrays stay
        shared with the full operators.
        """
        new = object.__new__(Operators)
        new.mesh = self.mesh
        new.params = self.params
        new.n_dofs = n_dofs
        new.batches = batches
        new.n_gauss = self.n_gauss
        new.gauss_xy = self.gauss_xy
        new.gauss_w = self.gauss_w
        new._projection = None
        new.elem_gp_ids = self.elem_gp_ids
        return new

    def element_matrices(self, scale, batch):
        """Scaled element stiffness K_e = sum_g scale_g M_eg."""
        return np.einsum("eg,egij->eij", scale[batch.gp_ids], batch.M)

    def stiffness_and_force(self, scale, u, n_dofs=None):
        """Assemble the secant stiffness and internal force together.

        scale is (1 - dbar) per global gauss point.  Returns (K, f) with
        K in CSR form including constrained rows and columns.
        """
        n = self.n_dofs if n_dofs is None else n_dofs
        f = np.zeros(n)
        rows_all, cols_all, data_all = [], [], []
        for b in self.batches:
            Ke = self.element_matrices(scale, b)
            if not np.all(np.isfinite(Ke)):
                bad = b.elem_ids[np.argwhere(
                    ~np.isfinite(Ke).all(axis=(1, 2)))[0][0]]
                raise FloatingPointError(
                    f"non-finite stiffness contribution from element {bad}")
            fe = np.einsum("eij,ej->ei", Ke, u[b.dofs])
            f += np.bincount(b.dofs.ravel(), weights=fe.ravel(), minlength=n)
            r, c = b.coo_pattern()
            rows_all.append(r)
            cols_all.append(c)
            data_all.append(Ke.ravel())
        K = sparse.coo_matrix(
            (np.concatenate(data_all),
             (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(n, n)).tocsr()
        return K, f

    def stiffness(self, scale, n_dofs=None):
        K, _ = self.stiffness_and_force(
            scale, np.zeros(self.n_dofs if n_dofs is None else n_dofs))
        return K

    def internal_force(self, scale, u, n_dofs=None):
        n = self.n_dofs if n_dofs is None else n_dofs
        f = np.zeros(n)
        for b in self.batches:
            Ke = self.element_matrices(scale, b)
            fe = np.einsum("eij,ej->ei", Ke, u[b.dofs])
            if not np.all(np.isfinite(fe)):
                bad = b.elem_ids[np.argwhere(~np.isfinite(fe).all(axis=1))[0][0]]
                raise FloatingPointError(
                    f"non-finite force contribution from element {bad}")
            f += np.bincount(b.dofs.ravel(), weights=fe.ravel(), minlength=n)
        return f

    # -- nodal projection (for rendering) --------------------------------

    def project_to_nodes(self, gauss_field):
        """Quadrature-weighted projection of a gauss field to mesh nodes."""
        if self._projection is None:
            n_nodes = self.mesh.n_nodes
            rows, cols, data = [], [], []
            for b in self.batches:
                ne, ngp, nn = b.n_elements, b.n_gauss, b.conn.shape[1]
                # weight of gauss point g on node a: N_a(xi_g) * w |J|
                wN = b.N[None, :, :] * b.wdetj[:, :, None]    # (ne, ngp, nn)
                rows.append(np.repeat(b.conn[:, None, :], ngp, axis=1).ravel())
                cols.append(np.repeat(b.gp_ids[:, :, None], nn, axis=2).ravel())
                data.append(wN.ravel())
            P = sparse.coo_matrix(
                (np.concatenate(data),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_nodes, self.n_gauss)).tocsr()
            den = np.asarray(P.sum(axis=1)).ravel()
            den[den == 0.0] = 1.0
            self._projection = (P, den)
        P, den = self._projection
        return (P @ gauss_field) / den


def apply_damping(K, lam):
    """Levenberg-Marquardt style damping, K + lam * diag(K).

    With lam = 0 the input matrix is returned unchanged.  Off-diagonal
    entries are never touched.
    """
    if lam < 0.0:
        raise ValueError("damping factor cannot be negative")
    if lam == 0.0:
        return K
    Kd = K.copy()
    Kd.setdiag(K.diagonal() * (1.0 + lam))
    return Kd


class Constraints:
    """Dirichlet constraints with load-factor scaling.

    Built from (node ids, dof, full-load value) triples; dof ids follow the
    interleaved layout (2 * node, 2 * node + 1).
    """

    def __init__(self, n_dofs, triples):
        comp = {"x": 0, "y": 1}
        values = {}
        for nodes, dof, value in triples:
            for nid in np.asarray(nodes, dtype=np.int64):
                idx = 2 * int(nid) + comp[dof]
                if idx in values and values[idx] != value:
                    raise ValueError(
                        f"conflicting prescribed values on dof {idx}")
                values[idx] = float(value)
        self.n_dofs = n_dofs
        self.cidx = np.array(sorted(values), dtype=np.int64)
        self.cval = np.array([values[i] for i in sorted(values)])
        self.free = np.ones(n_dofs, dtype=bool)
        self.free[self.cidx] = False
        self.free_idx = np.flatnonzero(self.free)

    @classmethod
    def from_mesh(cls, mesh):
        triples = [(ds.nodes, ds.dof, ds.value)
                   for ds in mesh.dirichlet_sets.values()]
        return cls(mesh.n_dofs, triples)

    def apply(self, u, load_factor):
        u[self.cidx] = load_factor * self.cval

    def reduce_matrix(self, K):
        return K[self.free_idx][:, self.free_idx]

    def reduce_vector(self, v):
        return v[self.free_idx]

    def expand(self, v_free):
        out = np.zeros(self.n_dofs)
        out[self.free_idx] = v_free
        return out


def external_force(mesh, n_dofs=None):
    """Consistent load vector from the mesh's traction sets."""
    n = mesh.n_dofs if n_dofs is None else n_dofs
    f = np.zeros(n)
    for ns in mesh.neumann_sets.values():
        p = mesh.nodes[ns.edges]                       # (nedge, 2, 2)
        length = np.hypot(*(p[:, 1] - p[:, 0]).T)
        for comp, t in enumerate(ns.traction):
            if t == 0.0:
                continue
            half = 0.5 * t * length
            np.add.at(f, 2 * ns.edges[:, 0] + comp, half)
            np.add.at(f, 2 * ns.edges[:, 1] + comp, half)
    return f
