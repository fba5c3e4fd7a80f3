"""Test-case definitions, the monolithic oracle wrapper and error metrics.

Three case families: a plate with a known cubic displacement field, a cube
cut by random planes into regions of different stiffness, and a box with
an imposed conical damage band (the pull-out analog).  Energy errors are
evaluated by element quadrature with the analytic field sampled at the
quadrature points, which keeps the energy split identity exact; the
nodal-interpolant variant is reported alongside with its defect.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .elasticity import LoadSet, Material, TET4_QUAD, hooke_matrix
from .mesh import (
    BoundaryConditions,
    CoarseMesh,
    NestedMesh,
    box_mesh,
    build_partition,
    classify_sp,
    refine,
)
from .microplanes import PLANES_64
from .reference import ReferenceSystem, assemble_reference, solve_reference
from .twoscale import ProblemSetup

__all__ = [
    "CaseSpec",
    "ErrorReport",
    "cubic_exact",
    "cubic_strain",
    "cubic_body_force",
    "cubic_traction",
    "microstructure_E",
    "cone_damage",
    "reference_oracle",
    "build_cubic_problem",
    "build_microstructure_problem",
    "build_cone_box_problem",
    "flatten_to_coarse",
    "energy_norm_fields",
    "error_report",
]

CUBIC_E = 36.5e9
CUBIC_NU = 0.2


@dataclass
class CaseSpec:
    """Configuration of one benchmark run (see cli.run for the mapping)."""

    kind: str = "cubic-plate"          # cubic-plate | micro-structure | cone-damage-box
    coarse_level: int = 0
    sp_depth: int = 2
    eps: float = 1e-7
    solver: str = "ts"                 # ts | tsi | tsdd | dd | fr
    ranks: int = 1
    warm_start: bool = False
    perturb_percent: float = 0.0
    n_planes: int = 16
    e_range: tuple = (36.5e9, 3650.0e9)
    cone_h: float = -400.0
    seed: int = 0

    def __post_init__(self):
        if self.sp_depth < 1:
            raise ValueError("SP depth must be >= 1")
        if self.solver == "dd" and self.ranks < 2:
            raise ValueError("dd needs at least 2 ranks")


# ---------------------------------------------------------------------------
# cubic plate (analytic field)


def cubic_exact(x, y, z, E=CUBIC_E, nu=CUBIC_NU, F=1.0, K=4.0):
    """Cubic displacement field over the plate; zero at the origin."""
    a = (nu + 1.0) * (1.0 - 2.0 * nu) * F / E
    return np.array([
        a * (x * x * (K / 2.0 - x / 3.0) + 2.0 * nu * (y * y - z * z)),
        -4.0 * a * nu * x * y,
        4.0 * a * nu * x * z,
    ])


def cubic_strain(x, y, z, E=CUBIC_E, nu=CUBIC_NU, F=1.0, K=4.0):
    """Strain tensor of the cubic field (diagonal)."""
    a = (nu + 1.0) * (1.0 - 2.0 * nu) * F / E
    return np.diag([a * (K * x - x * x), -4.0 * a * nu * x, 4.0 * a * nu * x])


def _cubic_stress_diag(x, E, nu, F, K):
    s11 = F * (1.0 - nu) * (K * x - x * x)
    s22 = F * nu * (K * x - x * x) - 4.0 * F * (1.0 - 2.0 * nu) * nu * x
    s33 = F * nu * (K * x - x * x) + 4.0 * F * (1.0 - 2.0 * nu) * nu * x
    return s11, s22, s33


def cubic_body_force(E=CUBIC_E, nu=CUBIC_NU, F=1.0, K=4.0):
    """f = -div sigma of the cubic field (equilibrium residual is zero)."""

    def f(p):
        return np.array([-F * (1.0 - nu) * (K - 2.0 * p[0]), 0.0, 0.0])

    return f


def cubic_traction(side, E=CUBIC_E, nu=CUBIC_NU, F=1.0, K=4.0):
    """sigma . n on one box side (x faces carry zero traction)."""
    normal = {
        "x0": (-1, 0), "x1": (1, 0), "y0": (-1, 1), "y1": (1, 1),
        "z0": (-1, 2), "z1": (1, 2),
    }[side]
    sign, axis = normal

    def t(p):
        s = _cubic_stress_diag(p[0], E, nu, F, K)
        out = np.zeros(3)
        out[axis] = sign * s[axis]
        return out

    return t


def flatten_to_coarse(nested: NestedMesh) -> CoarseMesh:
    """Turn a (conforming) nested mesh into a standalone coarse mesh."""
    if nested.hanging:
        raise ValueError("cannot flatten a mesh with hanging nodes")
    tets = np.concatenate([nested.micro[e] for e in range(nested.coarse.n_elements)])
    used = np.unique(tets)
    remap = -np.ones(nested.n_nodes, dtype=np.int64)
    remap[used] = np.arange(len(used))
    faces = {}
    for label, lst in nested.boundary_fine_faces().items():
        for fine_face, _e in lst:
            faces[tuple(sorted(int(remap[v]) for v in fine_face))] = label
    return CoarseMesh(nested.points[used], remap[tets], faces)


def _corner_node(mesh: CoarseMesh, point):
    d = np.linalg.norm(mesh.vertices - np.asarray(point), axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-9:
        raise ValueError(f"no vertex at {point}")
    return i


def build_cubic_problem(spec: CaseSpec, base=(4, 2, 1), dims=(4.0, 2.0, 1.0),
                        F=1.0, material=None):
    """Plate problem with the cubic exact field; all elements enriched."""
    K, H, T = dims
    labels = {s: s for s in ("x0", "x1", "y0", "y1", "z0", "z1")}
    mesh = box_mesh(*base, lengths=dims, face_labels=labels)
    if spec.coarse_level > 0:
        nested0 = refine(NestedMesh.from_coarse(mesh), lambda e: True, spec.coarse_level)
        mesh = flatten_to_coarse(nested0)
    nested = refine(NestedMesh.from_coarse(mesh), lambda e: True, spec.sp_depth)
    sp_info = classify_sp(nested)

    mat = material or Material(young_modulus=CUBIC_E, poisson_ratio=CUBIC_NU)
    A = _corner_node(mesh, (0.0, 0.0, 0.0))
    Bp = _corner_node(mesh, (K, 0.0, 0.0))
    C = _corner_node(mesh, (0.0, H, 0.0))
    bc = BoundaryConditions(point_constraints=[
        (A, 0), (A, 1), (A, 2), (Bp, 1), (Bp, 2), (C, 2),
    ])
    part = build_partition(nested, sp_info, bc)
    E, nu = mat.young_modulus, mat.poisson_ratio
    loads = LoadSet(
        body=cubic_body_force(E, nu, F, K),
        tractions={s: cubic_traction(s, E, nu, F, K) for s in ("y0", "y1", "z0", "z1")},
    )
    problem = ProblemSetup(nested, sp_info, part, mat, loads)
    exact = {
        "u": lambda p: cubic_exact(p[0], p[1], p[2], E, nu, F, K),
        "strain": lambda p: cubic_strain(p[0], p[1], p[2], E, nu, F, K),
    }
    return problem, exact


def build_affine_problem(spec: CaseSpec, base=(2, 1, 1), dims=(4.0, 2.0, 1.0),
                         G=None, selector=None):
    """Manufactured affine field u = G x: reproduced exactly by the spaces.

    G must vanish below the diagonal so the corner pins are compatible with
    zero prescribed displacements.
    """
    K, H, T = dims
    if G is None:
        G = np.array([[3e-4, 1e-4, -2e-4], [0.0, -1e-4, 5e-5], [0.0, 0.0, 2e-4]])
    if np.abs(np.tril(G, -1)).max() > 0:
        raise ValueError("G must be upper-triangular for the corner pins")
    labels = {s: s for s in ("x0", "x1", "y0", "y1", "z0", "z1")}
    mesh = box_mesh(*base, lengths=dims, face_labels=labels)
    nested = refine(NestedMesh.from_coarse(mesh),
                    selector if selector is not None else (lambda e: True),
                    spec.sp_depth)
    sp_info = classify_sp(nested)
    mat = Material(young_modulus=CUBIC_E, poisson_ratio=CUBIC_NU)
    eps_t = 0.5 * (G + G.T)
    voigt = np.array([eps_t[0, 0], eps_t[1, 1], eps_t[2, 2],
                      2 * eps_t[1, 2], 2 * eps_t[0, 2], 2 * eps_t[0, 1]])
    sv = hooke_matrix(mat.young_modulus, mat.poisson_ratio) @ voigt
    sigma = np.array([[sv[0], sv[5], sv[4]], [sv[5], sv[1], sv[3]], [sv[4], sv[3], sv[2]]])
    normals = {"x0": (-1, 0), "x1": (1, 0), "y0": (-1, 1), "y1": (1, 1),
               "z0": (-1, 2), "z1": (1, 2)}

    def traction(side):
        sign, axis = normals[side]
        n = np.zeros(3)
        n[axis] = sign
        t = sigma @ n
        return lambda p: t

    A = _corner_node(mesh, (0.0, 0.0, 0.0))
    Bp = _corner_node(mesh, (K, 0.0, 0.0))
    C = _corner_node(mesh, (0.0, H, 0.0))
    bc = BoundaryConditions(point_constraints=[
        (A, 0), (A, 1), (A, 2), (Bp, 1), (Bp, 2), (C, 2),
    ])
    part = build_partition(nested, sp_info, bc)
    loads = LoadSet(tractions={s: traction(s) for s in labels})
    problem = ProblemSetup(nested, sp_info, part, mat, loads)
    exact = {
        "u": lambda p: G @ p,
        "strain": lambda p: eps_t,
    }
    return problem, exact


# ---------------------------------------------------------------------------
# micro-structure cube


def microstructure_E(x, y, z, planes=None, E_min=36.5e9, E_max=3650.0e9):
    """Young's modulus from the sign code of the point against the planes.

    The region code is hashed (blake2b) to a log-uniform modulus in
    [E_min, E_max]; deterministic across runs and platforms.
    """
    if planes is None or len(planes) == 0:
        return E_min
    planes = np.asarray(planes)
    signs = (planes[:, 0] * x + planes[:, 1] * y + planes[:, 2] * z - planes[:, 3]) >= 0
    return _code_to_modulus(np.packbits(signs).tobytes(), E_min, E_max)


def _code_to_modulus(code: bytes, E_min, E_max):
    h = hashlib.blake2b(code, digest_size=8).digest()
    u = int.from_bytes(h, "big") / float(2**64)
    return E_min * (E_max / E_min) ** u


def region_code(points, planes):
    """Sign-code integers of an array of points (voxel oracle helper)."""
    planes = np.asarray(planes)
    pts = np.asarray(points)
    signs = (pts @ planes[:, :3].T - planes[:, 3]) >= 0
    weights = 1 << np.arange(signs.shape[1], dtype=np.int64)
    return signs @ weights


def build_microstructure_problem(spec: CaseSpec, base=(2, 2, 2)):
    """Pressurized cube with plane-wise random moduli; all nodes enriched."""
    labels = {s: s for s in ("x0", "x1", "y0", "y1", "z0", "z1")}
    mesh = box_mesh(*base, lengths=(2.0, 2.0, 2.0), face_labels=labels)
    if spec.coarse_level > 0:
        mesh = flatten_to_coarse(
            refine(NestedMesh.from_coarse(mesh), lambda e: True, spec.coarse_level))
    nested = refine(NestedMesh.from_coarse(mesh), lambda e: True, spec.sp_depth)
    sp_info = classify_sp(nested)

    planes = PLANES_64[: spec.n_planes]
    E_min, E_max = spec.e_range
    rng = np.random.default_rng(spec.seed)
    jitter = spec.perturb_percent / 100.0

    def modulus(p):
        E = microstructure_E(p[0], p[1], p[2], planes, E_min, E_max)
        if jitter:
            code = region_code(p[None, :], planes)[0]
            u = np.random.default_rng(spec.seed * 1_000_003 + int(code)).uniform(-1, 1)
            E = E * (1.0 + jitter * u)
        return E

    mat = Material(young_modulus=modulus, poisson_ratio=0.2)
    press = 4.0e6

    def pressure(side):
        axis = {"x": 0, "y": 1, "z": 2}[side[0]]
        sign = -1.0 if side[1] == "0" else 1.0

        def t(p):
            out = np.zeros(3)
            out[axis] = -sign * press  # compression on every face
            return out

        return t

    A = _corner_node(mesh, (0.0, 0.0, 0.0))
    Bp = _corner_node(mesh, (2.0, 0.0, 0.0))
    C = _corner_node(mesh, (0.0, 2.0, 0.0))
    bc = BoundaryConditions(point_constraints=[
        (A, 0), (A, 1), (A, 2), (Bp, 1), (Bp, 2), (C, 2),
    ])
    part = build_partition(nested, sp_info, bc)
    loads = LoadSet(tractions={s: pressure(s) for s in labels})
    return ProblemSetup(nested, sp_info, part, mat, loads)


# ---------------------------------------------------------------------------
# cone-damage box (pull-out analog)


def cone_damage(x, y, z, theta_deg=35.0, o1=-545.08, o2=-531.31, h=-400.0,
                y_floor=-469.0):
    """Imposed damage inside the double-cone envelope, 1 on the mid band.

    Inside the envelope (between the two coaxial cones, above y_floor and
    below h) the damage falls linearly from 1 at the mid-surface band to 0
    at the envelope walls, using the envelope half-thickness as length
    scale; outside it is 0.
    """
    theta = np.deg2rad(theta_deg)
    rho2 = x * x + z * z
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    if not (rho2 * c2 < (y - o1) ** 2 * s2):
        return 0.0
    if not (rho2 * c2 > (y - o2) ** 2 * s2):
        return 0.0
    if not (y_floor < y < h):
        return 0.0
    t = np.tan(theta)
    r1 = (y - o1) * t
    r2 = (y - o2) * t
    mid = 0.5 * (r1 + r2)
    half = 0.5 * (r1 - r2)
    s = abs(np.sqrt(rho2) - mid) / half
    return float(np.clip(2.0 * (1.0 - s), 0.0, 1.0))


def cone_envelope_membership(p, theta_deg=35.0, o1=-545.08, o2=-531.31,
                             h=-400.0, y_floor=-469.0):
    """Direct evaluation of the four envelope inequalities."""
    x, y, z = p
    theta = np.deg2rad(theta_deg)
    rho2 = x * x + z * z
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    return (rho2 * c2 < (y - o1) ** 2 * s2 and rho2 * c2 > (y - o2) ** 2 * s2
            and y_floor < y and y < h)


def build_cone_box_problem(spec: CaseSpec, base=(6, 2, 6)):
    """Box-with-cone analog of the pull-out test: NSP elements, mixed patches."""
    dims = (600.0, 119.0, 600.0)
    origin = (-300.0, -469.0, -300.0)
    labels = {s: s for s in ("x0", "x1", "y0", "y1", "z0", "z1")}
    mesh = box_mesh(*base, lengths=dims, origin=origin, face_labels=labels)
    if spec.coarse_level > 0:
        mesh = flatten_to_coarse(
            refine(NestedMesh.from_coarse(mesh), lambda e: True, spec.coarse_level))

    h = spec.cone_h
    y_floor = -469.0

    def dmg(p):
        return cone_damage(p[0], p[1], p[2], h=h, y_floor=y_floor)

    # refine every element within reach of the damage band: the band is thin
    # (radial width ~10), so select by distance to its mid surface instead of
    # sampling the damage value
    theta = np.deg2rad(35.0)
    o_mid = 0.5 * (-545.08 - 531.31)
    base_nested = NestedMesh.from_coarse(mesh)
    selector = []
    for e in range(mesh.n_elements):
        pts = mesh.vertices[mesh.tets[e]]
        diam = max(np.linalg.norm(pts[i] - pts[j]) for i in range(4) for j in range(i + 1, 4))
        probe = np.vstack([pts, pts.mean(axis=0)[None, :]])
        close = False
        for p in probe:
            y = np.clip(p[1], y_floor, h)
            if not (y_floor - 0.25 * diam <= p[1] <= h + 0.25 * diam):
                continue
            rho = np.hypot(p[0], p[2])
            mid = (y - o_mid) * np.tan(theta)
            if abs(rho - mid) <= 6.9 + 0.25 * diam:
                close = True
                break
        if close:
            selector.append(e)
    if not selector:
        raise ValueError("damage band does not intersect the box")
    nested = refine(base_nested, selector, spec.sp_depth)
    sp_info = classify_sp(nested)

    mat = Material(young_modulus=26.4e9, poisson_ratio=0.193, damage=dmg)
    # self-equilibrated loading (anchor pull + support-ring reaction) with
    # 3-2-1 corner pins: no Dirichlet faces, so hanging nodes on the SP/NSP
    # interface can never carry a Dirichlet label
    x0, y0, z0 = origin
    A = _corner_node(mesh, (x0, y0, z0))
    Bp = _corner_node(mesh, (x0 + dims[0], y0, z0))
    C = _corner_node(mesh, (x0, y0, z0 + dims[2]))
    bc = BoundaryConditions(point_constraints=[
        (A, 0), (A, 1), (A, 2), (Bp, 1), (Bp, 2), (C, 1),
    ])
    part = build_partition(nested, sp_info, bc)

    r_pull, r_in, r_out, P = 75.0, 150.0, 220.0, 2.0e6
    balance = r_pull**2 / (r_out**2 - r_in**2)

    def pull(p):
        rho2 = p[0] ** 2 + p[2] ** 2
        if rho2 <= r_pull**2:
            return np.array([0.0, P, 0.0])
        if r_in**2 <= rho2 <= r_out**2:
            return np.array([0.0, -P * balance, 0.0])
        return np.zeros(3)

    loads = LoadSet(tractions={"y1": pull})
    return ProblemSetup(nested, sp_info, part, mat, loads)


# ---------------------------------------------------------------------------
# oracle and error metrics


def reference_oracle(problem: ProblemSetup):
    """Monolithic reference solve: returns (u_r, ReferenceSystem, Factor)."""
    system = assemble_reference(problem.nested, problem.partition,
                                problem.material, problem.loads)
    u_r, F = solve_reference(system)
    return u_r, system, F


def _strain_from_nodal(points, leaves, values):
    """Constant strain per leaf from nodal displacement values (n_nodes, 3)."""
    p = points[leaves]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    gl = np.linalg.solve(T, np.broadcast_to(np.eye(3), T.shape).copy())
    grads = np.empty((len(leaves), 4, 3))
    grads[:, 1:] = np.transpose(gl, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    u = values[leaves]  # (k, 4, 3)
    G = np.einsum("kia,kic->kac", grads, u)  # grad u per leaf
    return 0.5 * (G + np.transpose(G, (0, 2, 1)))


def energy_norm_fields(problem: ProblemSetup, fields, analytic_strain=None):
    """Squared energy of (field_a - field_b) by element quadrature.

    fields: pair of nodal arrays (n_nodes, 3) or None to use the analytic
    strain in that slot.  The elastic coefficients are sampled exactly as
    in the stiffness assembly (per leaf centroid), so FE-FE energies match
    x^T A x to round-off.
    """
    nested, mat = problem.nested, problem.material
    fa, fb = fields
    bary, w = TET4_QUAD
    total = 0.0
    for e in range(nested.coarse.n_elements):
        leaves = nested.micro[e]
        pts = nested.points
        p = pts[leaves]
        vols = np.abs(np.linalg.det(
            np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
        )) / 6.0
        cents = p.mean(axis=1)
        if callable(mat.young_modulus):
            Es = np.array([mat.modulus_at(c) for c in cents])
        else:
            Es = np.full(len(leaves), mat.young_modulus)
        if mat.damage is not None:
            Es = Es * np.array([1.0 - mat.damage_at(c) for c in cents])
        C1 = hooke_matrix(1.0, mat.poisson_ratio)

        eps_a = _leaf_strains(pts, leaves, fa, bary, analytic_strain)
        eps_b = _leaf_strains(pts, leaves, fb, bary, analytic_strain)
        diff = eps_a - eps_b  # (k, q, 6)
        dens = np.einsum("kqi,ij,kqj->kq", diff, C1, diff)
        total += float(np.sum(dens @ w * vols * Es))
    return total


def _leaf_strains(points, leaves, fld, bary, analytic_strain):
    """Voigt strains at the quadrature points of each leaf, (k, q, 6)."""
    k, q = len(leaves), bary.shape[0]
    if fld is None:
        xq = np.einsum("qi,kid->kqd", bary, points[leaves])
        out = np.empty((k, q, 6))
        for i in range(k):
            for j in range(q):
                e = analytic_strain(xq[i, j])
                out[i, j] = [e[0, 0], e[1, 1], e[2, 2], 2 * e[1, 2], 2 * e[0, 2], 2 * e[0, 1]]
        return out
    eps = _strain_from_nodal(points, leaves, fld)  # (k, 3, 3) constant
    voigt = np.stack([
        eps[:, 0, 0], eps[:, 1, 1], eps[:, 2, 2],
        2 * eps[:, 1, 2], 2 * eps[:, 0, 2], 2 * eps[:, 0, 1],
    ], axis=1)
    return np.repeat(voigt[:, None, :], q, axis=1)


def expand_u_r(problem: ProblemSetup, u_r) -> np.ndarray:
    """Nodal field (n_nodes, 3) from the free vector, hanging values filled."""
    part = problem.partition
    full = np.zeros(3 * part.n_nodes)
    full[part.free_ref_dofs] = u_r
    for h, parents in problem.nested.hanging.items():
        for c in range(3):
            full[3 * h + c] = sum(w * full[3 * p + c] for p, w in parents)
    return full.reshape(-1, 3)


def build_problem(spec: CaseSpec):
    """Dispatch a CaseSpec to its builder; returns (problem, exact or None)."""
    if spec.kind == "cubic-plate":
        return build_cubic_problem(spec)
    if spec.kind == "micro-structure":
        return build_microstructure_problem(spec), None
    if spec.kind == "cone-damage-box":
        return build_cone_box_problem(spec), None
    raise ValueError(f"unknown case kind {spec.kind}")


def _perturbed_problem(spec: CaseSpec):
    """The perturbed twin used by warm-start runs."""
    import dataclasses

    if spec.kind == "micro-structure":
        spec2 = dataclasses.replace(spec, perturb_percent=spec.perturb_percent or 1.0)
        return build_microstructure_problem(spec2)
    # cubic / cone: uniform stiffness perturbation
    p = (spec.perturb_percent or 1.0) / 100.0
    if spec.kind == "cubic-plate":
        problem, _ = build_cubic_problem(
            spec, material=Material(young_modulus=CUBIC_E * (1 + p), poisson_ratio=CUBIC_NU))
        return problem
    base = build_cone_box_problem(spec)
    mat = base.material
    mat2 = Material(young_modulus=26.4e9 * (1 + p), poisson_ratio=mat.poisson_ratio,
                    damage=mat.damage)
    return ProblemSetup(base.nested, base.sp_info, base.partition, mat2, base.loads)


def run_case(spec: CaseSpec, outdir=None):
    """Run one benchmark case; returns the summary dict (files if outdir given).

    Output files: resi_history.csv (per-iteration records), summary.json,
    field_u.txt (ASCII node-value table), schedule.json for ts runs.
    See the README for the field-by-field schemas.
    """
    import json
    import os
    import time as _time

    from .ddsolver import dd_solve_from_triplets, reference_rank_triplets
    from .runtime import partition_mesh, run_ranks
    from .scheduler import PatchGraph, dump_json
    from .twoscale import TsConfig, solve_case

    out = build_problem(spec)
    problem, exact = out if isinstance(out, tuple) else (out, None)
    plan = partition_mesh(problem.nested, problem.sp_info, spec.ranks)
    summary = {
        "case": spec.kind,
        "solver": spec.solver,
        "ranks": spec.ranks,
        "eps": spec.eps,
        "coarse_level": spec.coarse_level,
        "sp_depth": spec.sp_depth,
        "n_free_dofs": int(problem.partition.n_ref_free),
        "n_nodes": int(problem.nested.n_nodes),
        "n_patches": len(problem.sp_info.patches),
        "n_nsp": len(problem.sp_info.nsp_elements),
        "n_hanging": len(problem.nested.hanging),
    }
    records = []
    schedule = None
    t0 = _time.perf_counter()
    if spec.solver in ("ts", "tsi", "tsdd"):
        strategy = {"ts": "tsd", "tsi": "tsi", "tsdd": "tsdd"}[spec.solver]
        cfg = TsConfig(eps=spec.eps, coarse_strategy=strategy, max_iterations=400)
        res = solve_case(problem, plan, cfg, n_ranks=spec.ranks)
        u_field = expand_u_r(problem, res.u_r)
        summary.update(converged=bool(res.converged), iterations=res.iterations,
                       final_resi=res.resi_history[-1] if res.resi_history else 0.0,
                       norm_B=res.norm_B)
        records = res.records
        schedule = res.schedule
        if spec.warm_start:
            problem2 = _perturbed_problem(spec)
            cold2 = solve_case(problem2, plan, cfg, n_ranks=spec.ranks)
            warm2 = solve_case(problem2, plan, cfg, n_ranks=spec.ranks, warm_u_r=res.u_r)
            summary["perturbed_cold_iterations"] = cold2.iterations
            summary["perturbed_warm_iterations"] = warm2.iterations
    elif spec.solver == "fr":
        u_R, system, _ = reference_oracle(problem)
        u_field = expand_u_r(problem, u_R)
        summary.update(converged=True, iterations=1, final_resi=system.residual(u_R))
    elif spec.solver == "dd":
        n = problem.partition.n_ref_free

        def prog(ctx):
            trips, bv, dofs = reference_rank_triplets(
                problem.nested, problem.sp_info, problem.partition,
                problem.material, problem.loads, plan, ctx.rank)
            return dd_solve_from_triplets(ctx, n, trips, bv, eps=spec.eps, dof_set=dofs)

        res = run_ranks(spec.ranks, prog)[0]
        u_field = expand_u_r(problem, res.x)
        summary.update(converged=bool(res.report.converged),
                       iterations=res.report.iterations,
                       final_resi=res.report.crit)
    else:
        raise ValueError(f"unknown solver {spec.solver}")
    summary["wall_time"] = _time.perf_counter() - t0

    if exact is not None and spec.solver in ("ts", "tsi", "tsdd"):
        u_R, system, _ = reference_oracle(problem)
        rep = error_report(problem, res.u_r, u_R, system, exact)
        summary["E_ts_C"] = rep.E_ts_C
        summary["E_ts_R"] = rep.E_ts_R
        summary["E_R_C"] = rep.E_R_C
        summary["identity_defect"] = rep.identity_defect

    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        with open(os.path.join(outdir, "resi_history.csv"), "w") as fh:
            fh.write("iteration,resi,coarse_kind,pcg_iterations,wall_time,"
                     "factor_flops,solve_flops\n")
            for r in records:
                fh.write(f"{r.iteration},{r.resi:.16e},{r.coarse_kind},"
                         f"{r.pcg_iterations},{r.wall_time:.6f},"
                         f"{r.factor_flops},{r.solve_flops}\n")
        with open(os.path.join(outdir, "field_u.txt"), "w") as fh:
            fh.write("# node  x  y  z  ux  uy  uz\n")
            for i, (p, u) in enumerate(zip(problem.nested.points, u_field)):
                fh.write(f"{i} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                         f"{u[0]:.12e} {u[1]:.12e} {u[2]:.12e}\n")
        if schedule is not None:
            owners = {}
            weights = {}
            for pi, patch in enumerate(problem.sp_info.patches):
                rs = tuple(sorted({int(plan.element_rank[e]) for e in patch.elements}))
                owners[pi] = rs
                weights[pi] = patch.weight
            graph = PatchGraph(spec.ranks, weights, owners)
            with open(os.path.join(outdir, "schedule.json"), "w") as fh:
                fh.write(dump_json(schedule, graph))
    return summary


@dataclass
class ErrorReport:
    """Relative errors of one iterate against the reference and exact fields."""

    E_ts_C: float
    E_ts_R: float
    E_R_C: float
    identity_defect: float
    E_ts_C_nodal: float
    E_ts_R_nodal: float
    E_R_C_nodal: float
    identity_defect_nodal: float
    norm_R: float
    norm_C: float


def error_report(problem, u_ts_r, u_R_r, system: ReferenceSystem, exact) -> ErrorReport:
    """Energy errors of Eq.-46 form plus the split-identity defects."""
    part = problem.partition
    f_ts = system.expand(u_ts_r)
    f_R = system.expand(u_R_r)
    strain = exact["strain"]

    e2_ts_R = energy_norm_fields(problem, (f_ts, f_R))
    e2_ts_C = energy_norm_fields(problem, (f_ts, None), strain)
    e2_R_C = energy_norm_fields(problem, (f_R, None), strain)
    zero = np.zeros((part.n_nodes, 3))
    n2_R = energy_norm_fields(problem, (f_R, zero))
    n2_C = energy_norm_fields(problem, (None, zero), strain)
    defect = abs(e2_ts_C - e2_ts_R - e2_R_C) / max(e2_ts_C, 1e-300)

    # nodal-interpolant variant in the discrete A-norm
    uC_nodes = np.array([exact["u"](p) for p in problem.nested.points])
    uC_r = uC_nodes.reshape(-1)[part.free_ref_dofs]
    dA = lambda a, b: float((a - b) @ (system.A_rr @ (a - b)))
    e2_ts_C_n = dA(u_ts_r, uC_r)
    e2_ts_R_n = dA(u_ts_r, u_R_r)
    e2_R_C_n = dA(u_R_r, uC_r)
    defect_n = abs(e2_ts_C_n - e2_ts_R_n - e2_R_C_n) / max(e2_ts_C_n, 1e-300)

    return ErrorReport(
        E_ts_C=np.sqrt(e2_ts_C / n2_C),
        E_ts_R=np.sqrt(e2_ts_R / n2_R),
        E_R_C=np.sqrt(e2_R_C / n2_C),
        identity_defect=defect,
        E_ts_C_nodal=np.sqrt(e2_ts_C_n / max(n2_C, 1e-300)),
        E_ts_R_nodal=np.sqrt(e2_ts_R_n / max(n2_R, 1e-300)),
        E_R_C_nodal=np.sqrt(e2_R_C_n / max(n2_C, 1e-300)),
        identity_defect_nodal=defect_n,
        norm_R=np.sqrt(n2_R),
        norm_C=np.sqrt(n2_C),
    )
