"""Linear-elastic element matrices and per-macro-element block assembly.

Constant-strain tetrahedra get exact single-point stiffness integration;
volume loads use the 4-point degree-2 rule and tractions the 6-point
degree-4 triangle rule, which keeps the discrete load consistent with the
energy quadrature used by the error metrics.  Damage and heterogeneous
moduli are sampled per micro-element centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import NestedMesh

__all__ = [
    "Material",
    "LoadSet",
    "ElementBlock",
    "NspBlock",
    "element_stiffness",
    "assemble_element_block",
    "assemble_nsp",
    "elastic_moduli",
    "TET4_QUAD",
    "TRI6_QUAD",
]


def elastic_moduli(E, nu):
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def hooke_matrix(E, nu):
    """6x6 Voigt elasticity matrix (order xx, yy, zz, yz, xz, xy)."""
    lam, mu = elastic_moduli(E, nu)
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.diag_indices(3)] += 2.0 * mu
    C[3, 3] = C[4, 4] = C[5, 5] = mu
    return C


@dataclass
class Material:
    """Isotropic elasticity with optional spatial modulus and damage fields.

    young_modulus may be a constant or a callable of position; damage is a
    callable of position returning d in [0, 1] (or None).  Both are sampled
    at micro-element centroids.
    """

    young_modulus: float | Callable = 1.0
    poisson_ratio: float = 0.3
    damage: Callable | None = None

    def __post_init__(self):
        if not callable(self.young_modulus) and self.young_modulus <= 0:
            raise ValueError("young_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")

    def modulus_at(self, x):
        return self.young_modulus(x) if callable(self.young_modulus) else self.young_modulus

    def damage_at(self, x):
        if self.damage is None:
            return 0.0
        d = float(self.damage(x))
        if not -1e-12 <= d <= 1.0 + 1e-12:
            raise ValueError(f"damage {d} outside [0, 1]")
        return min(max(d, 0.0), 1.0)


@dataclass
class LoadSet:
    """Volume force plus labelled tractions; prescribed displacements are zero.

    body(x) -> 3-vector in N/m^3; tractions maps a Neumann face label to
    t(x) -> 3-vector in N/m^2.  Nonzero prescribed displacements are not
    supported and must be rejected by callers that accept user data.
    """

    body: Callable | None = None
    tractions: dict[str, Callable] = field(default_factory=dict)


# 4-point tetrahedron rule, degree 2 (barycentric weights 1/4 each)
_TA = (5.0 - np.sqrt(5.0)) / 20.0
_TB = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
TET4_QUAD = (
    np.array([
        [_TB, _TA, _TA, _TA],
        [_TA, _TB, _TA, _TA],
        [_TA, _TA, _TB, _TA],
        [_TA, _TA, _TA, _TB],
    ]),
    np.full(4, 0.25),
)

# 6-point triangle rule, degree 4
_W1, _W2 = 0.109951743655322, 0.223381589678011
_A1, _B1 = 0.816847572980459, 0.091576213509771
_A2, _B2 = 0.108103018168070, 0.445948490915965
TRI6_QUAD = (
    np.array([
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]),
    np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
)


def _grads_and_volume(coords):
    """Shape-function gradients (4,3) and volume of one tetrahedron."""
    T = np.stack([coords[1] - coords[0], coords[2] - coords[0], coords[3] - coords[0]])
    det = np.linalg.det(T)
    vol = det / 6.0
    gl = np.linalg.solve(T, np.eye(3))  # gradients of barycentric lam1..lam3
    grads = np.empty((4, 3))
    grads[1:] = gl.T
    grads[0] = -gl.T.sum(axis=0)
    return grads, vol


def _b_matrix(grads):
    B = np.zeros((6, 12))
    for i in range(4):
        gx, gy, gz = grads[i]
        B[0, 3 * i] = gx
        B[1, 3 * i + 1] = gy
        B[2, 3 * i + 2] = gz
        B[3, 3 * i + 1] = gz
        B[3, 3 * i + 2] = gy
        B[4, 3 * i] = gz
        B[4, 3 * i + 2] = gx
        B[5, 3 * i] = gy
        B[5, 3 * i + 1] = gx
    return B


def element_stiffness(coords, material: Material):
    """12x12 stiffness and volume-load vector of one micro tetrahedron.

    Single-point quadrature is exact for the constant-strain stiffness;
    the load uses the 4-point rule.  Raises on inverted elements.
    """
    grads, vol = _grads_and_volume(np.asarray(coords, dtype=np.float64))
    if vol <= 0:
        raise ValueError("inverted element (non-positive volume)")
    centroid = np.mean(coords, axis=0)
    scale = 1.0 - material.damage_at(centroid)
    C = hooke_matrix(material.modulus_at(centroid), material.poisson_ratio)
    B = _b_matrix(grads)
    K = vol * scale * (B.T @ C @ B)
    return K, vol


def element_volume_load(coords, body):
    """Consistent nodal loads int f.v dV of a body force over one tetrahedron."""
    load = np.zeros(12)
    if body is None:
        return load
    bary, w = TET4_QUAD
    _, vol = _grads_and_volume(coords)
    for q in range(len(w)):
        x = bary[q] @ coords
        f = np.asarray(body(x), dtype=np.float64)
        for i in range(4):
            load[3 * i: 3 * i + 3] += w[q] * vol * bary[q, i] * f
    return load


def face_traction_load(coords3, traction):
    """Consistent nodal loads of a traction over one surface triangle."""
    load = np.zeros(9)
    p0, p1, p2 = coords3
    area = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0))
    bary, w = TRI6_QUAD
    for q in range(len(w)):
        x = bary[q] @ coords3
        t = np.asarray(traction(x), dtype=np.float64)
        for i in range(3):
            load[3 * i: 3 * i + 3] += w[q] * area * bary[q, i] * t
    return load


@dataclass
class ElementBlock:
    """Per-macro-element matrices of the fine problem, hanging nodes eliminated.

    nodes lists the element's F-level node ids (ascending); local dof i of
    node j is 3*j_local + i.  Dirichlet rows are kept; scaling holds the
    residual weights (1/multiplicity, zeroed on Dirichlet and interface rows).
    """

    element: int
    nodes: np.ndarray
    A_FF: sp.csr_matrix
    B_F: np.ndarray
    T_Fk: sp.csr_matrix | None = None
    P_Fk: sp.csr_matrix | None = None
    T_Fe: sp.csr_matrix | None = None
    u_F: np.ndarray | None = None
    VR_F: np.ndarray | None = None
    scaling: np.ndarray | None = None

    @property
    def ndof(self):
        return 3 * len(self.nodes)

    def local_index(self):
        return {int(v): i for i, v in enumerate(self.nodes)}


@dataclass
class NspBlock:
    """Coarse stiffness of an untouched element, split h/interface for assembly."""

    element: int
    nodes: np.ndarray          # the 4 coarse vertices
    K: np.ndarray              # 12x12
    B: np.ndarray              # 12


def _hanging_fold(nested: NestedMesh, nodes):
    """Node list without hanging nodes plus per-node substitution lists."""
    keep = [int(v) for v in nodes if int(v) not in nested.hanging]
    return np.array(sorted(keep), dtype=np.int64)


def batch_leaf_stiffness(points, leaves, material: Material):
    """Stiffness blocks (k,12,12) and volumes of a batch of tetrahedra."""
    p = points[leaves]  # (k,4,3)
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    det = np.linalg.det(T)
    if np.any(det <= 0):
        raise ValueError("inverted element (non-positive volume)")
    vol = det / 6.0
    gl = np.linalg.solve(T, np.broadcast_to(np.eye(3), T.shape).copy())
    grads = np.empty((len(leaves), 4, 3))
    grads[:, 1:] = np.transpose(gl, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)

    k = len(leaves)
    B = np.zeros((k, 6, 12))
    gx, gy, gz = grads[:, :, 0], grads[:, :, 1], grads[:, :, 2]
    for i in range(4):
        B[:, 0, 3 * i] = gx[:, i]
        B[:, 1, 3 * i + 1] = gy[:, i]
        B[:, 2, 3 * i + 2] = gz[:, i]
        B[:, 3, 3 * i + 1] = gz[:, i]
        B[:, 3, 3 * i + 2] = gy[:, i]
        B[:, 4, 3 * i] = gz[:, i]
        B[:, 4, 3 * i + 2] = gx[:, i]
        B[:, 5, 3 * i] = gy[:, i]
        B[:, 5, 3 * i + 1] = gx[:, i]

    centroids = p.mean(axis=1)
    nu = material.poisson_ratio
    if callable(material.young_modulus):
        Es = np.array([material.modulus_at(c) for c in centroids])
    else:
        Es = np.full(k, material.young_modulus)
    if material.damage is not None:
        scale = np.array([1.0 - material.damage_at(c) for c in centroids])
    else:
        scale = np.ones(k)
    C1 = hooke_matrix(1.0, nu)
    K = np.einsum("kia,ij,kjb->kab", B, C1, B) * (Es * scale * vol)[:, None, None]
    return K, vol


def assemble_element_block(
    e: int,
    nested: NestedMesh,
    material: Material,
    loads: LoadSet,
    traction_faces: dict[int, list] | None = None,
) -> ElementBlock:
    """Assemble A_FF and B_F of one SP macro element.

    Micro contributions are accumulated over the element; rows and columns
    of hanging nodes are redistributed to their parent vertices with the
    stored interpolation weights.  Dirichlet rows are retained.
    traction_faces maps this element id to (face, label) pairs of its
    surface triangles (precomputed from the nested mesh).
    """
    leaves = nested.micro[e]
    raw_nodes = np.unique(leaves)
    nodes = _hanging_fold(nested, raw_nodes)
    index = {int(v): i for i, v in enumerate(nodes)}
    ndof = 3 * len(nodes)

    # per-node substitution: hanging node -> [(kept node, weight)]
    def subs(v):
        v = int(v)
        if v in index:
            return [(index[v], 1.0)]
        return [(index[p], w) for p, w in nested.hanging[v]]

    K_all, vols = batch_leaf_stiffness(nested.points, leaves, material)
    B = np.zeros(ndof)

    has_hanging = any(int(v) in nested.hanging for v in raw_nodes)
    if not has_hanging:
        loc = np.vectorize(index.__getitem__)(leaves)  # (k,4)
        dof = (3 * loc[:, :, None] + np.arange(3)).reshape(len(leaves), 12)
        rows = np.repeat(dof, 12, axis=1).ravel()
        cols = np.tile(dof, (1, 12)).ravel()
        vals = K_all.reshape(len(leaves), 144).ravel()
    else:
        rows_l, cols_l, vals_l = [], [], []
        for li, leaf in enumerate(leaves):
            K = K_all[li]
            sub = [subs(v) for v in leaf]
            for a in range(4):
                for (ia, wa) in sub[a]:
                    for b in range(4):
                        for (ib, wb) in sub[b]:
                            for ca in range(3):
                                rows_l.extend((3 * ia + ca,) * 3)
                                cols_l.extend((3 * ib, 3 * ib + 1, 3 * ib + 2))
                                vals_l.extend(wa * wb * K[3 * a + ca, 3 * b: 3 * b + 3])
        rows, cols, vals = rows_l, cols_l, vals_l

    if loads.body is not None:
        for leaf in leaves:
            load = element_volume_load(nested.points[leaf], loads.body)
            for a, v in enumerate(leaf):
                for (iv, wv) in subs(v):
                    B[3 * iv: 3 * iv + 3] += wv * load[3 * a: 3 * a + 3]

    if traction_faces:
        for face, label in traction_faces.get(e, ()):
            tr = loads.tractions.get(label)
            if tr is None:
                continue
            coords3 = nested.points[list(face)]
            tl = face_traction_load(coords3, tr)
            for i, v in enumerate(face):
                for (iv, wv) in subs(v):
                    B[3 * iv: 3 * iv + 3] += wv * tl[3 * i: 3 * i + 3]

    A = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()
    A.sum_duplicates()
    return ElementBlock(e, nodes, A, B)


def assemble_nsp(
    e: int,
    nested: NestedMesh,
    material: Material,
    loads: LoadSet,
    traction_faces: dict[int, list] | None = None,
) -> NspBlock:
    """Coarse-element stiffness and load of an NSP element.

    The h-h block, the h-interface coupling through the identity transfer
    and the interface-interface part are all carried by the single coarse
    matrix; the caller assembles it at classical coarse dof positions.
    """
    tet = nested.coarse.tets[e]
    coords = nested.points[tet]
    K, _ = element_stiffness(coords, material)
    B = element_volume_load(coords, loads.body)
    if traction_faces:
        index = {int(v): i for i, v in enumerate(tet)}
        for face, label in traction_faces.get(e, ()):
            tr = loads.tractions.get(label)
            if tr is None:
                continue
            tl = face_traction_load(nested.points[list(face)], tr)
            for i, v in enumerate(face):
                iv = index[int(v)]
                B[3 * iv: 3 * iv + 3] += tl[3 * i: 3 * i + 3]
    return NspBlock(e, np.asarray(tet, dtype=np.int64), K, B)


def traction_face_table(nested: NestedMesh, loads: LoadSet):
    """Element id -> [(surface fine face, label)] for labels carrying tractions."""
    table: dict[int, list] = {}
    by_label = nested.boundary_fine_faces()
    for label in loads.tractions:
        for face, e in by_label.get(label, ()):
            table.setdefault(e, []).append((face, label))
    return table
