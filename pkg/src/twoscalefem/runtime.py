"""Cooperative in-process rank simulation and the weighted mesh partitioner.

Ranks run as threads but exactly one is active at a time; control is handed
over only at blocking receives, so every communication pattern expressible
with blocking point-to-point messages runs deterministically.  Collectives
are built on gather/broadcast with rank-ascending, key-sorted accumulation
so reductions are bitwise reproducible across rank counts.
"""

from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass
from random import Random

import numpy as np

__all__ = [
    "RankContext",
    "PartitionPlan",
    "DeadlockError",
    "run_ranks",
    "partition_elements",
    "partition_mesh",
]


class DeadlockError(RuntimeError):
    pass


class _Abort(BaseException):
    pass


class _Simulator:
    def __init__(self, n, seed=None):
        self.n = n
        self.rng = Random(seed) if seed is not None else None
        self.channels: dict[tuple, deque] = {}
        self.sent = Counter()
        self.received = Counter()
        self.rank_sem = [threading.Semaphore(0) for _ in range(n)]
        self.control = threading.Semaphore(0)
        self.state = ["ready"] * n        # ready | waiting | done
        self.wait_key = [None] * n
        self.errors: list = []
        self.abort = False

    def channel(self, key):
        ch = self.channels.get(key)
        if ch is None:
            ch = self.channels[key] = deque()
        return ch

    def runnable(self):
        out = []
        for r in range(self.n):
            if self.state[r] == "ready":
                out.append(r)
            elif self.state[r] == "waiting" and self.channels.get(self.wait_key[r]):
                out.append(r)
        return out

    def run(self, program, args_list):
        results = [None] * self.n

        def entry(rank, args):
            self.rank_sem[rank].acquire()
            try:
                if not self.abort:
                    results[rank] = program(RankContext(self, rank), *args)
            except _Abort:
                pass
            except BaseException as exc:  # propagate the first failure
                self.errors.append((rank, exc))
                self.abort = True
            finally:
                self.state[rank] = "done"
                self.control.release()

        threads = [
            threading.Thread(target=entry, args=(r, args_list[r]), daemon=True)
            for r in range(self.n)
        ]
        for t in threads:
            t.start()
        while True:
            if all(s == "done" for s in self.state):
                break
            cand = self.runnable()
            if not cand or self.abort:
                pending = [r for r in range(self.n) if self.state[r] != "done"]
                if not pending:
                    break
                detail = ", ".join(
                    f"rank {r} blocked on recv{self.wait_key[r]}" for r in pending
                )
                self.abort = True
                for r in pending:  # wake them into the abort path
                    self.state[r] = "ready"
                    self.rank_sem[r].release()
                    self.control.acquire()
                if self.errors:
                    break  # a rank failure caused the stall; re-raised below
                raise DeadlockError(f"all ranks blocked: {detail}")
            pick = self.rng.choice(cand) if self.rng is not None else cand[0]
            self.state[pick] = "ready"
            self.wait_key[pick] = None
            self.rank_sem[pick].release()
            self.control.acquire()
        for t in threads:
            t.join()
        if self.errors:
            rank, exc = self.errors[0]
            raise exc
        leftover = {k: len(v) for k, v in self.channels.items() if v}
        if leftover:
            raise RuntimeError(f"undelivered messages at teardown: {leftover}")
        if self.sent != self.received:
            raise RuntimeError("message conservation violated")
        return results


class RankContext:
    """Per-rank handle: point-to-point messages, collectives, subgroup split."""

    def __init__(self, sim: _Simulator, rank: int, members=None, namespace=()):
        self._sim = sim
        self.rank = rank if members is None else members.index(rank)
        self._world_rank = rank
        self._members = members if members is not None else list(range(sim.n))
        self._namespace = namespace
        self._split_count = 0

    @property
    def size(self):
        return len(self._members)

    def _world(self, rank):
        return self._members[rank]

    def send(self, dst, obj, tag=0):
        key = (self._world_rank, self._world(dst), (self._namespace, tag))
        self._sim.channel(key).append(obj)
        self._sim.sent[key] += 1

    def recv(self, src, tag=0):
        sim = self._sim
        key = (self._world(src), self._world_rank, (self._namespace, tag))
        ch = sim.channel(key)
        while not ch:
            if sim.abort:
                raise _Abort()
            sim.state[self._world_rank] = "waiting"
            sim.wait_key[self._world_rank] = key
            sim.control.release()
            sim.rank_sem[self._world_rank].acquire()
            if sim.abort:
                raise _Abort()
        sim.received[key] += 1
        return ch.popleft()

    # collectives (all built on ordered point-to-point)
    def gather(self, obj, root=0):
        if self.rank == root:
            out = []
            for r in range(self.size):
                out.append(obj if r == root else self.recv(r, tag=-1))
            return out
        self.send(root, obj, tag=-1)
        return None

    def bcast(self, obj, root=0):
        if self.rank == root:
            for r in range(self.size):
                if r != root:
                    self.send(r, obj, tag=-2)
            return obj
        return self.recv(root, tag=-2)

    def allgather(self, obj):
        return self.bcast(self.gather(obj, 0), 0)

    def scatter(self, objs, root=0):
        if self.rank == root:
            for r in range(self.size):
                if r != root:
                    self.send(r, objs[r], tag=-3)
            return objs[root]
        return self.recv(root, tag=-3)

    def barrier(self):
        self.bcast(self.gather(None, 0) and None, 0)

    def reduce_sum(self, value, root=0):
        vals = self.gather(value, root)
        if vals is None:
            return None
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        return acc

    def all_reduce_sum(self, value):
        return self.bcast(self.reduce_sum(value, 0), 0)

    def all_reduce_max(self, value):
        vals = self.gather(value, 0)
        out = max(vals) if vals is not None else None
        return self.bcast(out, 0)

    def reduce_ordered_sum(self, items, root=0):
        """Sum of (key, value) contributions in globally sorted key order.

        The summation order depends only on the keys, never on the rank
        layout, so results are bitwise identical for any rank count.
        """
        lists = self.gather(list(items), root)
        if lists is None:
            return None
        merged = [kv for lst in lists for kv in lst]
        merged.sort(key=lambda kv: kv[0])
        acc = 0.0
        for _, v in merged:
            acc = acc + v
        return acc

    def all_reduce_ordered_sum(self, items):
        return self.bcast(self.reduce_ordered_sum(items, 0), 0)

    def split_by_color(self, color):
        """Subgroup communicator of all ranks passing the same color.

        Collective over the current group; ranks passing None get None back.
        Subgroup rank order follows the parent order.
        """
        self._split_count += 1
        colors = self.allgather(color)
        if color is None:
            return None
        members = [self._world(r) for r, c in enumerate(colors) if c == color]
        ns = self._namespace + (self._split_count, _color_key(color))
        return RankContext(self._sim, self._world_rank, members, ns)


def _color_key(color):
    return color if isinstance(color, (int, str, tuple)) else repr(color)


def run_ranks(n, program, args=(), per_rank_args=None, seed=None):
    """Run an SPMD program on n simulated ranks; returns per-rank results.

    ``seed`` shuffles the cooperative scheduling order; outcomes must not
    depend on it (validated in the test suite).
    """
    sim = _Simulator(n, seed)
    args_list = per_rank_args if per_rank_args is not None else [tuple(args)] * n
    return sim.run(program, args_list)


@dataclass
class PartitionPlan:
    """Macro element -> rank assignment with per-rank weight totals."""

    element_rank: np.ndarray
    rank_weights: np.ndarray

    @property
    def n_ranks(self):
        return len(self.rank_weights)

    def elements_of(self, rank):
        return np.nonzero(self.element_rank == rank)[0]

    def imbalance(self):
        w = self.rank_weights
        return float(w.max() / max(w.min(), 1e-300))


def partition_elements(weights, adjacency, n_ranks) -> PartitionPlan:
    """Greedy growth partitioning: seeds spread by BFS, lightest rank grows.

    Deterministic given the element ordering: the lightest rank (ties to the
    lowest id) absorbs its lowest-id unassigned neighbour, falling back to
    the globally lowest-id unassigned element when its frontier is empty.
    """
    weights = np.asarray(weights, dtype=np.float64)
    ne = len(weights)
    if n_ranks > ne:
        raise ValueError(f"rank count {n_ranks} exceeds element count {ne}")
    if n_ranks == 1:
        return PartitionPlan(np.zeros(ne, dtype=np.int64), np.array([weights.sum()]))

    # farthest-point seeding over the adjacency graph
    def bfs_dist(starts):
        dist = np.full(ne, -1, dtype=np.int64)
        q = deque()
        for s in starts:
            dist[s] = 0
            q.append(s)
        while q:
            u = q.popleft()
            for v in sorted(adjacency[u]):
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    seeds = [0]
    while len(seeds) < n_ranks:
        dist = bfs_dist(seeds)
        dist[dist < 0] = np.iinfo(np.int64).max  # disconnected: farthest
        far = int(np.argmax(dist))
        if far in seeds:
            far = next(e for e in range(ne) if e not in seeds)
        seeds.append(far)

    rank_of = np.full(ne, -1, dtype=np.int64)
    totals = np.zeros(n_ranks)
    frontiers = [set() for _ in range(n_ranks)]
    for r, s in enumerate(seeds):
        rank_of[s] = r
        totals[r] += weights[s]
        frontiers[r].update(v for v in adjacency[s] if rank_of[v] < 0)

    unassigned = ne - n_ranks
    while unassigned:
        r = int(np.lexsort((np.arange(n_ranks), totals))[0])
        cand = sorted(v for v in frontiers[r] if rank_of[v] < 0)
        if cand:
            pick = cand[0]
        else:
            pick = next(e for e in range(ne) if rank_of[e] < 0)
        rank_of[pick] = r
        totals[r] += weights[pick]
        frontiers[r].update(v for v in adjacency[pick] if rank_of[v] < 0)
        frontiers[r].discard(pick)
        unassigned -= 1
    return PartitionPlan(rank_of, totals)


def partition_mesh(nested, sp_info, n_ranks) -> PartitionPlan:
    """Partition macro elements weighted by micro count plus enriched nodes."""
    ne = nested.coarse.n_elements
    enriched = set(int(v) for v in sp_info.enriched_nodes)
    weights = np.empty(ne)
    for e in range(ne):
        n_enr = sum(1 for v in nested.coarse.tets[e] if int(v) in enriched)
        weights[e] = len(nested.micro[e]) + n_enr
    return partition_elements(weights, nested.coarse.element_adjacency(), n_ranks)
