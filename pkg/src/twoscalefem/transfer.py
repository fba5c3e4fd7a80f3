"""Interpolation operators between scales and the coarse-system assembly.

T_Fk carries the classical hat values of the coarse element at fine node
locations; T_Fe carries the shifted local solutions multiplied by the
enriched node's hat and re-interpolated on the fine mesh.  The coarse
matrix keeps a constant part assembled once and enrichment-dependent
blocks rebuilt every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elasticity import ElementBlock, NspBlock
from .mesh import DofPartition, NestedMesh, SpInfo, _p1_weights

__all__ = [
    "build_tfk",
    "update_tfe",
    "enriched_corners",
    "CoarseSystem",
    "coarse_triplets_constant",
    "coarse_triplets_enrichment",
    "monolithic_transfer",
]


def barycentric_matrix(nested: NestedMesh, e: int, nodes) -> np.ndarray:
    """Hat values N^i(x_j) of coarse element e at the given fine nodes (n,4)."""
    coords = nested.points[nested.coarse.tets[e]]
    out = np.empty((len(nodes), 4))
    for j, v in enumerate(nodes):
        out[j] = _p1_weights(coords, nested.points[int(v)])
    return out


def build_tfk(block: ElementBlock, nested: NestedMesh) -> sp.csr_matrix:
    """Classical transfer of one SP element: rows F-dofs, columns C-dofs (12).

    Row (node j, comp c) holds N^i(x_j) at column (vertex i, comp c); rows of
    fine nodes sitting on coarse vertices are unit vectors.
    """
    N = barycentric_matrix(nested, block.element, block.nodes)
    N[np.abs(N) < 1e-14] = 0.0
    n = len(block.nodes)
    # fine dof (j, c) -> columns (i, c), one hat value per coarse vertex
    rows = []
    cols = []
    vals = []
    for j in range(n):
        for c in range(3):
            for i in range(4):
                w = N[j, i]
                if w != 0.0:
                    rows.append(3 * j + c)
                    cols.append(3 * i + c)
                    vals.append(w)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, 12))
    return T


def enriched_corners(nested: NestedMesh, partition: DofPartition, e: int) -> list[int]:
    """Enriched coarse vertices of element e, ascending node id."""
    return sorted(int(v) for v in nested.coarse.tets[e] if int(v) in partition.enriched_index)


def update_tfe(
    block: ElementBlock,
    nested: NestedMesh,
    partition: DofPartition,
    patch_fields: dict[int, np.ndarray],
) -> sp.csr_matrix:
    """Shifted-enrichment transfer of one SP element.

    patch_fields maps each enriched corner node p to the full local field of
    patch p evaluated at block.nodes, shape (n, 3): solved interior values,
    imposed boundary values and zeros on Dirichlet dofs.  Each column
    (p, c) holds N^p(x_j) * (field[j, c] - field_at_p[c]) at rows (j, c);
    rows on Dirichlet dofs are zeroed (they belong to the coupling block).
    Unrefined elements in the patch produce identically zero columns only
    through their fields; transition elements are handled by the caller
    passing no field (column block left zero).
    """
    corners = enriched_corners(nested, partition, block.element)
    n = len(block.nodes)
    ncols = 3 * len(corners)
    if ncols == 0:
        return sp.csr_matrix((3 * n, 0))
    N = barycentric_matrix(nested, block.element, block.nodes)
    tet = [int(v) for v in nested.coarse.tets[block.element]]
    node_pos = {int(v): j for j, v in enumerate(block.nodes)}
    dir_mask = partition.ref_dirichlet

    rows, cols, vals = [], [], []
    for ci, p in enumerate(corners):
        fld = patch_fields.get(p)
        if fld is None:
            continue
        hat = N[:, tet.index(p)]
        shift = fld[node_pos[p]]
        for c in range(3):
            col = 3 * ci + c
            colvals = hat * (fld[:, c] - shift[c])
            for j in range(n):
                v = colvals[j]
                if v != 0.0 and not dir_mask[3 * int(block.nodes[j]) + c]:
                    rows.append(3 * j + c)
                    cols.append(col)
                    vals.append(v)
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, ncols))


@dataclass
class CoarseSystem:
    """Constant and per-iteration parts of the reduced coarse problem."""

    partition: DofPartition
    ini_rows: np.ndarray = field(default=None)
    ini_cols: np.ndarray = field(default=None)
    ini_vals: np.ndarray = field(default=None)
    B_ini: np.ndarray = field(default=None)

    @property
    def n(self):
        return self.partition.n_coarse_free

    def set_constant(self, contribs, b_contribs):
        """contribs: iterable of (element id, rows, cols, vals) in free coarse indices."""
        contribs = sorted(contribs, key=lambda t: t[0])
        if contribs:
            self.ini_rows = np.concatenate([c[1] for c in contribs])
            self.ini_cols = np.concatenate([c[2] for c in contribs])
            self.ini_vals = np.concatenate([c[3] for c in contribs])
        else:
            self.ini_rows = np.zeros(0, dtype=np.int64)
            self.ini_cols = np.zeros(0, dtype=np.int64)
            self.ini_vals = np.zeros(0)
        self.B_ini = np.zeros(self.n)
        for eid, idx, vals in sorted(b_contribs, key=lambda t: t[0]):
            np.add.at(self.B_ini, idx, vals)

    def build(self, enrich_contribs=(), b_enrich=()):  # per-iteration parts
        """Assemble A_gg and B_g from the stored constants plus enrichment triplets."""
        parts_r = [self.ini_rows]
        parts_c = [self.ini_cols]
        parts_v = [self.ini_vals]
        for eid, rows, cols, vals in sorted(enrich_contribs, key=lambda t: t[0]):
            parts_r.append(rows)
            parts_c.append(cols)
            parts_v.append(vals)
        A = sp.coo_matrix(
            (np.concatenate(parts_v), (np.concatenate(parts_r), np.concatenate(parts_c))),
            shape=(self.n, self.n),
        ).tocsc()
        A.sum_duplicates()
        B = self.B_ini.copy()
        for eid, idx, vals in sorted(b_enrich, key=lambda t: t[0]):
            np.add.at(B, idx, vals)
        return A, B


def _free_scatter(partition: DofPartition, coarse_dofs):
    """Map coarse dof ids to free positions; -1 entries are dropped by callers."""
    return partition.coarse_dof_index[np.asarray(coarse_dofs, dtype=np.int64)]


def element_classical_dofs(nested: NestedMesh, e: int) -> np.ndarray:
    tet = nested.coarse.tets[e]
    return np.concatenate([[3 * int(v), 3 * int(v) + 1, 3 * int(v) + 2] for v in tet])


def element_enriched_dofs(nested: NestedMesh, partition: DofPartition, e: int) -> np.ndarray:
    corners = enriched_corners(nested, partition, e)
    out = []
    for p in corners:
        for c in range(3):
            out.append(partition.enriched_dof(p, c))
    return np.asarray(out, dtype=np.int64)


def _dense_triplets(eid, M, row_dofs, col_dofs, partition):
    """Free-index triplets of a small dense block, Dirichlet rows/cols dropped."""
    r = _free_scatter(partition, row_dofs)
    c = _free_scatter(partition, col_dofs)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    keep = (rr >= 0) & (cc >= 0)
    vals = np.asarray(M)[keep]
    return (eid, rr[keep], cc[keep], vals)


def coarse_triplets_constant(block: ElementBlock, nested, partition):
    """A_kk = T_Fk^T P_Fk and B_k = T_Fk^T B_F of one SP element, free-indexed."""
    A_kk = (block.T_Fk.T @ block.P_Fk).toarray()
    dofs = element_classical_dofs(nested, block.element)
    trip = _dense_triplets(block.element, A_kk, dofs, dofs, partition)
    bk = block.T_Fk.T @ block.B_F
    idx = _free_scatter(partition, dofs)
    keep = idx >= 0
    return trip, (block.element, idx[keep], bk[keep])


def nsp_triplets(nsp: NspBlock, partition):
    """Coarse stiffness of an NSP element at classical free positions."""
    dofs = np.concatenate([[3 * int(v), 3 * int(v) + 1, 3 * int(v) + 2] for v in nsp.nodes])
    trip = _dense_triplets(nsp.element, nsp.K, dofs, dofs, partition)
    idx = _free_scatter(partition, dofs)
    keep = idx >= 0
    return trip, (nsp.element, idx[keep], nsp.B[keep])


def coarse_triplets_enrichment(block: ElementBlock, nested, partition):
    """(e,e) and (e,k)+(k,e) blocks plus B_e of one SP element, free-indexed."""
    T_Fe = block.T_Fe
    e_dofs = element_enriched_dofs(nested, partition, block.element)
    if T_Fe is None or T_Fe.shape[1] == 0 or T_Fe.nnz == 0:
        return None
    A_ee = (T_Fe.T @ block.A_FF @ T_Fe).toarray()
    A_ek = (T_Fe.T @ block.P_Fk).toarray()
    c_dofs = element_classical_dofs(nested, block.element)
    t1 = _dense_triplets(block.element, A_ee, e_dofs, e_dofs, partition)
    t2 = _dense_triplets(block.element, A_ek, e_dofs, c_dofs, partition)
    t3 = _dense_triplets(block.element, A_ek.T, c_dofs, e_dofs, partition)
    rows = np.concatenate([t1[1], t2[1], t3[1]])
    cols = np.concatenate([t1[2], t2[2], t3[2]])
    vals = np.concatenate([t1[3], t2[3], t3[3]])
    be = T_Fe.T @ block.B_F
    idx = _free_scatter(partition, e_dofs)
    keep = idx >= 0
    return (block.element, rows, cols, vals), (block.element, idx[keep], be[keep])


def monolithic_transfer(nested, sp_info: SpInfo, partition: DofPartition, blocks, patch_fields_all):
    """Full T operator from free coarse dofs to free reference dofs.

    Oracle-only: the production path never assembles this matrix.  blocks
    maps SP element id -> ElementBlock with T_Fk/T_Fe current;
    patch_fields_all as in update_tfe, keyed per element.
    """
    n_r = partition.n_ref_free
    n_g = partition.n_coarse_free
    entries: dict[tuple[int, int], float] = {}

    # h rows: identity against the matching coarse dofs
    for v in partition.h_nodes:
        for c in range(3):
            ri = partition.ref_dof_index[3 * int(v) + c]
            gi = partition.coarse_dof_index[3 * int(v) + c]
            if ri >= 0 and gi >= 0:
                entries[(ri, gi)] = 1.0

    for e, block in sorted(blocks.items()):
        c_dofs = element_classical_dofs(nested, e)
        e_dofs = element_enriched_dofs(nested, partition, e)
        Tk = block.T_Fk.tocoo()
        for r, c, v in zip(Tk.row, Tk.col, Tk.data):
            node = int(block.nodes[r // 3])
            ri = partition.ref_dof_index[3 * node + (r % 3)]
            gi = partition.coarse_dof_index[c_dofs[c]]
            if ri >= 0 and gi >= 0:
                entries[(ri, gi)] = v
        if block.T_Fe is not None and block.T_Fe.nnz:
            Te = block.T_Fe.tocoo()
            for r, c, v in zip(Te.row, Te.col, Te.data):
                node = int(block.nodes[r // 3])
                ri = partition.ref_dof_index[3 * node + (r % 3)]
                gi = partition.coarse_dof_index[e_dofs[c]]
                if ri >= 0 and gi >= 0:
                    entries[(ri, gi)] = v

    rows = np.array([k[0] for k in entries], dtype=np.int64)
    cols = np.array([k[1] for k in entries], dtype=np.int64)
    vals = np.array(list(entries.values()))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_r, n_g))
