"""Adaptive healthy/unhealthy domain decomposition.

The mesh is split along the subdomain contours supplied by the tracker:
elements with any node inside a subdomain rectangle form the unhealthy
region, everything else stays healthy and therefore linear elastic.
Interface nodes are duplicated and the two copies are tied by stiff
penalty springs, so the healthy block of the system matrix is constant
for the lifetime of a partition and is factorized exactly once.  Each
nonlinear iteration then only refactorizes the (small) unhealthy block
condensed with the precomputed interface coupling term.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .assembly import Constraints, apply_damping, external_force
from .constitutive import equivalent_strain, mazars_damage
from .contours import detect_damage_contours
from .imaging import (Rasterizer, capture_misleading, invert,
                      pad_with_median, write_pgm)
from .solver import ACCEPT, REPEAT, SolveFailure, TrialFields
from .tracking import NONE, ContourTracker


# ---------------------------------------------------------------------------
# mesh partition


class Partition:
    """Expanded-numbering split of a mesh into healthy/unhealthy parts."""

    def __init__(self, ops, constraints, reaction_dofs, node_mask,
                 previous=None):
        mesh = ops.mesh
        self.node_mask = np.asarray(node_mask, dtype=bool)
        self.unhealthy_sel = []
        for i, b in enumerate(ops.batches):
            sel = self.node_mask[b.conn].any(axis=1)
            if previous is not None:
                sel |= previous.unhealthy_sel[i]
            self.unhealthy_sel.append(sel)
        if not any(sel.any() for sel in self.unhealthy_sel):
            raise ValueError("partition contains no unhealthy elements")

        u_nodes, h_nodes = [], []
        for b, sel in zip(ops.batches, self.unhealthy_sel):
            u_nodes.append(np.unique(b.conn[sel]))
            h_nodes.append(np.unique(b.conn[~sel]))
        u_nodes = np.unique(np.concatenate(u_nodes))
        h_nodes = np.unique(np.concatenate(h_nodes)) if h_nodes else \
            np.empty(0, dtype=np.int64)
        self.interface = np.intersect1d(u_nodes, h_nodes)

        n0 = mesh.n_nodes
        n_int = self.interface.size
        self.n_nodes = n0 + n_int
        self.n_dofs = 2 * self.n_nodes
        self.n_original_dofs = mesh.n_dofs
        dup_id = np.full(n0, -1, dtype=np.int64)
        dup_id[self.interface] = n0 + np.arange(n_int)
        self.dup_id = dup_id

        self.h_batches, self.u_batches = [], []
        self.ugp_mask = np.zeros(ops.n_gauss, dtype=bool)
        n_unhealthy = 0
        for b, sel in zip(ops.batches, self.unhealthy_sel):
            if (~sel).any():
                self.h_batches.append(b.take(~sel))
            if sel.any():
                conn = b.conn[sel]
                conn = np.where(dup_id[conn] >= 0, dup_id[conn], conn)
                self.u_batches.append(b.take(sel, conn))
                self.ugp_mask[b.gp_ids[sel].ravel()] = True
                n_unhealthy += int(sel.sum())
        self.n_unhealthy_elements = n_unhealthy

        # dof ownership in the expanded numbering
        u_node = np.zeros(self.n_nodes, dtype=bool)
        u_node[np.setdiff1d(u_nodes, self.interface)] = True
        u_node[n0:] = True
        self.u_dof_mask = np.repeat(u_node, 2)

        # interface spring pairs, one per duplicated dof
        orig = np.repeat(2 * self.interface, 2)
        orig[1::2] += 1
        dup = np.repeat(2 * dup_id[self.interface], 2)
        dup[1::2] += 1
        self.spring_orig = orig
        self.spring_dup = dup

        # constraints and reaction dofs carried onto the duplicates
        triples = []
        comp = ("x", "y")
        for idx, val in zip(constraints.cidx, constraints.cval):
            node, c = divmod(int(idx), 2)
            triples.append(([node], comp[c], val))
            if dup_id[node] >= 0:
                triples.append(([dup_id[node]], comp[c], val))
        self.constraints = Constraints(self.n_dofs, triples)
        extra = []
        for idx in np.asarray(reaction_dofs, dtype=np.int64):
            node, c = divmod(int(idx), 2)
            if dup_id[node] >= 0:
                extra.append(2 * dup_id[node] + c)
        self.reaction_dofs = np.concatenate(
            [np.asarray(reaction_dofs, dtype=np.int64),
             np.asarray(extra, dtype=np.int64)])

        free = self.constraints.free
        self.h_free = np.flatnonzero(free & ~self.u_dof_mask)
        self.u_free = np.flatnonzero(free & self.u_dof_mask)

        # displacement transfer between numberings
        self._src_dofs = self.spring_orig
        self._dup_dofs = self.spring_dup

    def expand(self, u):
        w = np.zeros(self.n_dofs)
        w[:self.n_original_dofs] = u
        w[self._dup_dofs] = u[self._src_dofs]
        return w

    def collapse(self, w):
        u = w[:self.n_original_dofs].copy()
        u[self._src_dofs] = 0.5 * (w[self._src_dofs] + w[self._dup_dofs])
        return u

    def describe(self):
        return {
            "n_unhealthy_elements": int(self.n_unhealthy_elements),
            "n_interface_nodes": int(self.interface.size),
            "n_dofs": int(self.n_dofs),
            "n_healthy_free_dofs": int(self.h_free.size),
            "n_unhealthy_free_dofs": int(self.u_free.size),
        }


# ---------------------------------------------------------------------------
# Schur complement solve


class SchurSolver:
    """Block elimination of the healthy dofs from a 2x2 saddle system.

    Solves ``[[A_hh, A_hu], [A_uh, A_uu]] [dh, du] = -[r_h, r_u]`` with
    ``A_hh`` factorized once at construction.  The coupling correction
    ``A_uh A_hh^{-1} A_hu`` only involves the columns of ``A_hu`` that
    are nonzero, so it is computed as a small dense block and embedded
    sparsely; ``solve`` then factorizes only the condensed unhealthy
    block for whatever ``A_uu`` the caller brings.
    """

    def __init__(self, a_hh, a_hu, a_uh):
        self.lu_hh = spla.splu(a_hh.tocsc())
        self.a_hu = a_hu.tocsr()
        self.a_uh = a_uh.tocsr()
        n_u = self.a_uh.shape[0]
        cols = np.unique(self.a_hu.tocoo().col)
        if cols.size:
            X = self.lu_hh.solve(self.a_hu[:, cols].toarray())
            block = self.a_uh @ X                      # (n_u, n_cols)
            rows = np.unique(self.a_uh.tocoo().row)
            dense = block[rows]
            self.coupling = sparse.coo_matrix(
                (dense.ravel(),
                 (np.repeat(rows, cols.size), np.tile(cols, rows.size))),
                shape=(n_u, n_u)).tocsr()
        else:
            self.coupling = sparse.csr_matrix((n_u, n_u))
        self.n_condensed_factorizations = 0

    def solve(self, a_uu, r_h, r_u):
        y = self.lu_hh.solve(r_h)
        S = (a_uu - self.coupling).tocsc()
        lu_s = spla.splu(S)
        self.n_condensed_factorizations += 1
        du = lu_s.solve(-r_u + self.a_uh @ y)
        dh = -y - self.lu_hh.solve(self.a_hu @ du)
        return dh, du


# ---------------------------------------------------------------------------
# partitioned solve backend


SPRING_STIFFNESS_RATIO = 1e4


class PartitionedSystem:
    """Healthy/unhealthy split solve behind the standard backend protocol.

    The healthy block (elastic stiffness plus interface springs) is
    factorized once here; every correction solve only refactorizes the
    condensed unhealthy block.  Damping is applied to the unhealthy
    diagonal alone, which includes the spring entries at the interface,
    so it grounds the floating directions of a badly damaged subdomain.
    """

    mode = "partitioned"

    def __init__(self, ops, partition, table, params, committed,
                 debug_direct=False):
        self.ops = ops
        self.partition = partition
        self.table = table
        self.params = params
        self.debug_direct = debug_direct
        p = partition
        self.h_ops = ops.restricted(p.h_batches, p.n_dofs)
        self.u_ops = ops.restricted(p.u_batches, p.n_dofs)
        self.reaction_dofs = p.reaction_dofs

        k_h = self.h_ops.stiffness(np.ones(ops.n_gauss), p.n_dofs) \
            if p.h_batches else sparse.csr_matrix((p.n_dofs, p.n_dofs))
        if p.h_free.size:
            ref = k_h.diagonal()[p.h_free].max()
        else:
            ref = self.u_ops.stiffness(
                np.ones(ops.n_gauss), p.n_dofs).diagonal()[p.u_free].max()
        self.beta = SPRING_STIFFNESS_RATIO * float(ref)

        n_pairs = p.spring_orig.size
        if n_pairs:
            rows = np.concatenate([p.spring_orig, p.spring_dup,
                                   p.spring_orig, p.spring_dup])
            cols = np.concatenate([p.spring_orig, p.spring_dup,
                                   p.spring_dup, p.spring_orig])
            data = self.beta * np.concatenate(
                [np.ones(2 * n_pairs), -np.ones(2 * n_pairs)])
            self.k_spring = sparse.coo_matrix(
                (data, (rows, cols)), shape=(p.n_dofs, p.n_dofs)).tocsr()
        else:
            self.k_spring = sparse.csr_matrix((p.n_dofs, p.n_dofs))

        if p.h_free.size:
            a_full = k_h + self.k_spring
            a_hh = a_full[p.h_free][:, p.h_free]
            a_hu = a_full[p.h_free][:, p.u_free]
            a_uh = a_full[p.u_free][:, p.h_free]
            self.schur = SchurSolver(a_hh, a_hu, a_uh)
        else:
            self.schur = None

        # frozen healthy-side fields; the restricted averaging window
        # covers every point whose neighbourhood can see unhealthy damage
        self.base_d_bar = committed.d_bar.copy()
        self.halo_rows = np.flatnonzero(table.reach(p.ugp_mask))
        self._halo_average = table.restricted(self.halo_rows)
        self.f_ext = external_force(ops.mesh, p.n_dofs)
        self.n_healthy_factorizations = 1 if self.schur is not None else 0

    @property
    def n_dofs(self):
        return self.partition.n_dofs

    @property
    def constraints(self):
        return self.partition.constraints

    def begin(self, u, load_factor):
        w = self.partition.expand(u)
        self.partition.constraints.apply(w, load_factor)
        return w

    def trial(self, w, kappa):
        # The strain envelope is tracked over the whole mesh (cheap, and
        # it keeps the history of points that join the unhealthy region
        # later exact); only the averaged damage is restricted.  Healthy
        # damage stays frozen in d_bar, so the solve never sees it --
        # the observer repartitions if it ever exceeds tolerance.
        u = self.partition.collapse(w)
        eps = self.ops.strains(u)
        eq = equivalent_strain(eps, self.params)
        kap = np.maximum(kappa, eq)
        d = mazars_damage(kap, self.params)
        d_bar = self.base_d_bar.copy()
        d_bar[self.halo_rows] = self._halo_average(d)
        return TrialFields(eq, kap, d, d_bar, 1.0 - d_bar)

    def _internal_force(self, scale, w, k_u=None, f_u=None):
        if f_u is None:
            f_u = self.u_ops.internal_force(scale, w, self.partition.n_dofs)
        f = f_u + self.k_spring @ w
        if self.partition.h_batches:
            f += self.h_ops.internal_force(scale, w, self.partition.n_dofs)
        return f

    def solve_correction(self, w, scale, lam):
        p = self.partition
        k_u, f_u = self.u_ops.stiffness_and_force(scale, w, p.n_dofs)
        f = self._internal_force(scale, w, f_u=f_u) - self.f_ext
        a_uu = (k_u + self.k_spring)[p.u_free][:, p.u_free]
        a_uu = apply_damping(a_uu, lam)
        r_u = f[p.u_free]
        try:
            if self.schur is None:
                du = spla.splu(a_uu.tocsc()).solve(-r_u)
                dh = np.empty(0)
            else:
                dh, du = self.schur.solve(a_uu, f[p.h_free], r_u)
        except RuntimeError as err:
            raise SolveFailure(str(err)) from err
        if not (np.all(np.isfinite(du)) and np.all(np.isfinite(dh))):
            raise SolveFailure("non-finite correction")
        delta = np.zeros(p.n_dofs)
        delta[p.u_free] = du
        delta[p.h_free] = dh
        if self.debug_direct:
            self._check_against_direct(k_u, f, lam, delta)
        return delta

    def _check_against_direct(self, k_u, f, lam, delta):
        """Cross-check the condensed solve against a direct factorization
        of the full expanded block system (debug aid)."""
        p = self.partition
        a_uu = apply_damping(
            (k_u + self.k_spring)[p.u_free][:, p.u_free], lam)
        if self.schur is None:
            rows = [[a_uu]]
            idx = [p.u_free]
        else:
            k_h = self.h_ops.stiffness(np.ones(self.ops.n_gauss), p.n_dofs)
            a_full = k_h + self.k_spring
            rows = [[a_full[p.h_free][:, p.h_free],
                     a_full[p.h_free][:, p.u_free]],
                    [a_full[p.u_free][:, p.h_free], a_uu]]
            idx = [p.h_free, p.u_free]
        A = sparse.bmat(rows).tocsc()
        rhs = -np.concatenate([f[i] for i in idx])
        direct = spla.splu(A).solve(rhs)
        mine = np.concatenate([delta[i] for i in idx])
        scale_ref = max(float(np.linalg.norm(direct)), 1e-30)
        err = float(np.linalg.norm(mine - direct)) / scale_ref
        if err > 1e-8:
            raise AssertionError(
                f"condensed solve deviates from direct solve by {err:.3e}")

    def reaction(self, w, scale):
        f = self._internal_force(scale, w)
        return float(f[self.reaction_dofs].sum())

    def collapse(self, w):
        return self.partition.collapse(w)

    def describe(self):
        out = {"mode": self.mode, "beta": self.beta}
        out.update(self.partition.describe())
        return out


# ---------------------------------------------------------------------------
# the adaptive observer


class AdaptiveDecomposition:
    """Post-increment observer running the image-based tracking loop.

    After every converged increment the averaged damage field is drawn,
    cleaned and searched for contours.  The tracker decides whether the
    current partition still contains the damage; if not, a new partition
    is staged and the increment is either accepted (growth was caught
    early enough) or repeated (a contour escaped its subdomain).  A
    direct check on the healthy region backs up the image pipeline: if
    damage appears outside every subdomain, the increment is repeated on
    an enlarged partition regardless of what the contours said.
    """

    def __init__(self, ops, constraints, reaction_dofs, table, params,
                 raster_config, track_config, purity_tol=5e-3,
                 snapshot_dir=None, debug_direct=False):
        self.ops = ops
        self.constraints = constraints
        self.reaction_dofs = reaction_dofs
        self.table = table
        self.params = params
        self.raster_config = raster_config
        self.purity_tol = purity_tol
        self.snapshot_dir = snapshot_dir
        self.debug_direct = debug_direct
        self.rasterizer = Rasterizer(ops.mesh, raster_config)
        self.tracker = ContourTracker(track_config, ops.mesh.bounding_box())
        self.misleading = None
        self.partition = None
        self.events = []
        self.digests = []

    # -- imaging ---------------------------------------------------------

    def _detect(self, analysis, d_bar):
        nodal = self.ops.project_to_nodes(d_bar)
        gray = self.rasterizer.rasterize(nodal)
        padded = pad_with_median(invert(gray), self.raster_config.pad)
        if self.misleading is None:
            self.misleading = capture_misleading(padded)
        snapshot = {} if self.snapshot_dir is not None else None
        result = detect_damage_contours(padded, self.misleading,
                                        self.raster_config, snapshot)
        if snapshot is not None:
            self._write_snapshots(analysis, gray, padded, snapshot)
        return result

    def _write_snapshots(self, analysis, gray, padded, snapshot):
        os.makedirs(self.snapshot_dir, exist_ok=True)
        tag = f"inc_{analysis.increment_index:04d}"
        write_pgm(os.path.join(self.snapshot_dir, f"{tag}_gray.pgm"),
                  gray.pixels)
        write_pgm(os.path.join(self.snapshot_dir, f"{tag}_padded.pgm"),
                  padded.pixels)
        for stage, img in snapshot.items():
            write_pgm(os.path.join(self.snapshot_dir, f"{tag}_{stage}.pgm"),
                      img.pixels)

    # -- partition management ---------------------------------------------

    def _stage(self, analysis, committed, node_mask):
        partition = Partition(self.ops, self.constraints, self.reaction_dofs,
                              node_mask, previous=self.partition)
        system = PartitionedSystem(self.ops, partition, self.table,
                                   self.params, committed,
                                   debug_direct=self.debug_direct)
        analysis.stage_system(system)
        self.partition = partition
        return partition

    def _purity_violation(self, fields):
        """Nodes of healthy elements that are about to pick up damage."""
        if self.partition is None:
            return None
        bad = fields.d_local > self.purity_tol
        bad[self.partition.ugp_mask] = False
        if not bad.any():
            return None
        mask = np.zeros(self.ops.mesh.n_nodes, dtype=bool)
        for b in self.ops.batches:
            hit = bad[b.gp_ids].any(axis=1)
            if hit.any():
                mask[np.unique(b.conn[hit])] = True
        return mask

    # -- observer protocol -------------------------------------------------

    def after_increment(self, analysis, record, fields, w):
        detection = self._detect(analysis, fields.d_bar)
        self.digests.append(detection.digest)
        decision = self.tracker.decide(detection.contours)

        action = decision.action
        reason = decision.reason
        committed = fields if action != REPEAT else analysis.state
        node_mask = None
        if analysis.system.mode == "partitioned":
            violation = self._purity_violation(fields)
            if violation is not None:
                action = REPEAT
                reason = "damage detected outside the subdomains"
                committed = analysis.state
                node_mask = self.tracker.node_mask(self.ops.mesh.nodes)
                node_mask |= violation

        if action == NONE:
            return ACCEPT
        if node_mask is None:
            node_mask = self.tracker.node_mask(self.ops.mesh.nodes)
        partition = self._stage(analysis, committed, node_mask)
        self.events.append({
            "increment": analysis.increment_index,
            "load_factor": record.load_factor,
            "action": action,
            "reason": reason,
            "n_contours": len(detection.contours),
            "distances": [float(d) for d in decision.distances],
            "subdomains": [list(map(float, r)) for r in self.tracker.sdcs],
            **partition.describe(),
        })
        return REPEAT if action == REPEAT else ACCEPT
