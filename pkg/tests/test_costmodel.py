"""Cost-model checks against direct evaluation and a brute-force octree enumerator."""

import numpy as np
import pytest

from twoscalefem import costmodel as cm


def octree_nodes(L):
    """All lattice nodes of the level-L octree cube as an integer grid."""
    s = 2**L + 1
    return s**3


def enumerate_patch(L_c, L, kind):
    """Brute-force fine-node count of one patch of the given type.

    Builds the union of level-L_c cells incident to a representative coarse
    node and counts level-L lattice nodes inside it.
    """
    step = 2 ** (L - L_c)  # fine nodes per coarse cell edge
    n_cells = 2**L_c
    reps = {
        "corner": (0, 0, 0),
        "edge": (1, 0, 0),
        "face": (1, 1, 0),
        "vol": (1, 1, 1),
    }
    node = reps[kind]
    cells = []
    for cx in (node[0] - 1, node[0]):
        for cy in (node[1] - 1, node[1]):
            for cz in (node[2] - 1, node[2]):
                if 0 <= cx < n_cells and 0 <= cy < n_cells and 0 <= cz < n_cells:
                    cells.append((cx, cy, cz))
    fine = set()
    for cx, cy, cz in cells:
        for ix in range(step + 1):
            for iy in range(step + 1):
                for iz in range(step + 1):
                    fine.add((cx * step + ix, cy * step + iy, cz * step + iz))
    return 3 * len(fine)


def count_coarse_node_kinds(L_c):
    n = 2**L_c + 1
    kinds = {"corner": 0, "edge": 0, "face": 0, "vol": 0}
    for x in range(n):
        for y in range(n):
            for z in range(n):
                ext = sum(1 for v in (x, y, z) if v in (0, n - 1))
                kinds[["vol", "face", "edge", "corner"][ext]] += 1
    return kinds


def test_nb_dof_values():
    assert cm.nb_dof(0) == 24
    assert cm.nb_dof(1) == 81
    assert cm.nb_dof(3) == 2187


def test_nb_dof_matches_lattice():
    for L in range(6):
        assert cm.nb_dof(L) == 3 * octree_nodes(L)


def test_patch_count_examples():
    assert cm.patch_counts(2)["corner"] == 8
    assert cm.patch_counts(2)["edge"] == 36
    for L_c in range(4):
        counts = cm.patch_counts(L_c)
        assert sum(counts.values()) == octree_nodes(L_c)


@pytest.mark.parametrize("L_c", [0, 1, 2, 3])
def test_patch_formulas_match_enumerator(L_c):
    for L in range(L_c, 6):
        assert cm.patch_counts(L_c) == count_coarse_node_kinds(L_c)
        dofs = cm.patch_dofs(L_c, L)
        for kind in ("corner", "edge", "face", "vol"):
            if cm.patch_counts(L_c)[kind] == 0:
                continue
            assert dofs[kind] == enumerate_patch(L_c, L, kind), (L_c, L, kind)


def test_ratio_peak_at_L2():
    ratios = {L_c: cm.ts_ratio(L_c, 2, 30, 0.017, 0.017) for L_c in range(3)}
    best = max(ratios, key=ratios.get)
    assert best == 1
    assert ratios[1] == pytest.approx(1.76, abs=0.05)


def test_no_gain_at_L1():
    assert max(cm.ts_ratio(L_c, 1, 30, 0.017, 0.017) for L_c in (0, 1)) <= 1.0


def test_interior_minimum_iso_L8():
    costs = [cm.cost_ts(L_c, 8, 30, 0.017, 0.017) for L_c in range(9)]
    best = int(np.argmin(costs))
    assert 0 < best < 8
    lc, jump3 = cm.optimal_coarse_level(8)
    assert lc == best


def test_cost_positive_and_continuous_in_sr():
    for sr0 in (0.005, 0.017, 0.3, 0.9):
        base = cm.cost_ts(2, 5, 30, sr0, sr0)
        assert base > 0
        for h in (1e-6, 1e-8):
            near = cm.cost_ts(2, 5, 30, sr0 + h, sr0 + h)
            assert abs(near - base) / base < 1e-3


def test_sweep_csv_shape():
    text = cm.sweep_csv(range(2, 9))
    lines = text.strip().splitlines()
    assert lines[0] == "L,L_c,cost_ts,cost_full_rank,ratio"
    assert len(lines) == 1 + sum(L + 1 for L in range(2, 9))


def test_params_validation():
    with pytest.raises(ValueError):
        cm.CostParams(L=2, L_c=3)
    with pytest.raises(ValueError):
        cm.CostParams(L=2, L_c=1, N_l=0)
    with pytest.raises(ValueError):
        cm.CostParams(L=2, L_c=1, SR_c=0.0)
