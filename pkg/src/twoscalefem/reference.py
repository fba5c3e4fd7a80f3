"""Monolithic assembly of the reference system and its direct solution.

This is the oracle side of the two-scale solver: the union mesh (refined
SP plus untouched coarse elements) assembled in one piece, hanging
relations eliminated, Dirichlet rows dropped (prescribed values are zero)
and solved by the sparse direct factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elasticity import LoadSet, Material, batch_leaf_stiffness, element_volume_load, face_traction_load, traction_face_table
from .mesh import DofPartition, NestedMesh
from .sparsela import factorize

__all__ = ["ReferenceSystem", "assemble_reference", "solve_reference"]


@dataclass
class ReferenceSystem:
    """Reduced reference operator A_rr, right-hand side B_r and index maps."""

    A_rr: sp.csc_matrix
    B_r: np.ndarray
    partition: DofPartition
    f_row_mask: np.ndarray   # rows of r belonging to the f-set
    spf_row_mask: np.ndarray  # rows of r on the SP/NSP interface
    hanging: dict

    def norm_B(self) -> float:
        return float(np.linalg.norm(self.B_r))

    def residual(self, u_r: np.ndarray, zero_spf: bool = False) -> float:
        """Relative f-row residual of the reference system (Eq. of resi)."""
        res = self.A_rr @ u_r - self.B_r
        mask = self.f_row_mask.copy()
        if zero_spf:
            mask &= ~self.spf_row_mask
        return float(np.linalg.norm(res[mask]) / np.linalg.norm(self.B_r))

    def expand(self, u_r: np.ndarray) -> np.ndarray:
        """Full nodal field (n_nodes, 3) with hanging and Dirichlet values filled."""
        part = self.partition
        full = np.zeros(3 * part.n_nodes)
        full[part.free_ref_dofs] = u_r
        for h, parents in self.hanging.items():
            for c in range(3):
                full[3 * h + c] = sum(w * full[3 * p + c] for p, w in parents)
        return full.reshape(-1, 3)


def assemble_reference(
    nested: NestedMesh,
    partition: DofPartition,
    material: Material,
    loads: LoadSet,
) -> ReferenceSystem:
    nn = nested.n_nodes
    ndof = 3 * nn
    rows, cols, vals = [], [], []
    B = np.zeros(ndof)

    tr_table = traction_face_table(nested, loads)
    for e in range(nested.coarse.n_elements):
        leaves = nested.micro[e]
        K_all, _ = batch_leaf_stiffness(nested.points, leaves, material)
        dof = (3 * leaves[:, :, None] + np.arange(3)).reshape(len(leaves), 12)
        rows.append(np.repeat(dof, 12, axis=1).ravel())
        cols.append(np.tile(dof, (1, 12)).ravel())
        vals.append(K_all.reshape(-1))
        if loads.body is not None:
            for leaf in leaves:
                load = element_volume_load(nested.points[leaf], loads.body)
                for a, v in enumerate(leaf):
                    B[3 * v: 3 * v + 3] += load[3 * a: 3 * a + 3]
        for face, label in tr_table.get(e, ()):
            tr = loads.tractions.get(label)
            if tr is None:
                continue
            tl = face_traction_load(nested.points[list(face)], tr)
            for i, v in enumerate(face):
                B[3 * v: 3 * v + 3] += tl[3 * i: 3 * i + 3]

    A_RR = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsc()
    A_RR.sum_duplicates()

    # eliminate hanging relations: u_R = W u_M, A_MM = W^T A_RR W
    kept = np.ones(ndof, dtype=bool)
    w_rows, w_cols, w_vals = list(range(ndof)), list(range(ndof)), [1.0] * ndof
    for h, parents in nested.hanging.items():
        for c in range(3):
            kept[3 * h + c] = False
            w_vals[3 * h + c] = 0.0
            for p, w in parents:
                w_rows.append(3 * h + c)
                w_cols.append(3 * p + c)
                w_vals.append(w)
    W_full = sp.csr_matrix((w_vals, (w_rows, w_cols)), shape=(ndof, ndof))
    W = W_full[:, partition.free_ref_dofs]  # straight to free columns (zero Dirichlet)
    A_rr = (W.T @ A_RR @ W).tocsc()
    A_rr.sum_duplicates()
    B_r = W.T @ B

    free = partition.free_ref_dofs
    f_node_set = set(int(v) for v in partition.f_nodes)
    spf_nodes = _interface_nodes(nested, partition)
    nodes_of_free = free // 3
    f_mask = np.array([int(v) in f_node_set for v in nodes_of_free])
    spf_mask = np.array([int(v) in spf_nodes for v in nodes_of_free])

    return ReferenceSystem(A_rr, B_r, partition, f_mask, spf_mask, nested.hanging)


def _interface_nodes(nested: NestedMesh, partition: DofPartition) -> set:
    """f-set nodes that also touch an NSP element (the SPF ring)."""
    f_set = set(int(v) for v in partition.f_nodes)
    out = set()
    for e in range(nested.coarse.n_elements):
        tet = [int(v) for v in nested.coarse.tets[e]]
        if any(v in partition.enriched_index for v in tet):
            continue  # SP element
        for v in tet:
            if v in f_set:
                out.add(v)
    return out


def solve_reference(system: ReferenceSystem):
    F = factorize(system.A_rr)
    u_r = F.solve(system.B_r)
    return u_r, F
