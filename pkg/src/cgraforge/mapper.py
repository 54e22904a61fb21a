"""Modulo scheduler, placer and router: validity oracle for design points.

Maps a kernel graph onto a fabric at the smallest initiation interval (II)
the search can prove feasible. A mapping assigns every node a tile and a
start cycle such that

* no two nodes share a (tile, start mod II) slot,
* every dependence u -> v with distance d satisfies
  start(v) >= start(u) + latency(u) + hops(route) - d * II,
* every route steps only between topology neighbors, and
* II fits the fabric's config memory depth.

Route hops cost one cycle per hop on MESH and KINGMESH and one cycle total
between distinct tiles on CROSSBAR (a crossbar route is a single hop).

Search strategy: II is searched ascending from the resource / recurrence
lower bounds. Each II attempt is a depth-first search over (tile, residue)
assignments whose first descent is exactly greedy list scheduling (nodes
ordered by (ASAP level, id), tiles ordered nearest-first to already placed
dataflow neighbors) and which backtracks under MapBudget.placement_attempts.
Start cycles are recovered from the residues by a longest-path solve over
the dependence difference constraints, so on small instances the search is
effectively exhaustive and the returned II is optimal. The whole pipeline is
deterministic: identical inputs give byte-identical results.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .arch import DesignPoint, FabricSpec, FuKind, Topology, neighbors
from .kernel import KernelGraph

Tile = tuple[int, int]

_ENUMERATION_NODE_LIMIT = 32
_ENUMERATION_PATH_CAP = 200_000


@dataclass(frozen=True)
class MapBudget:
    """Bounds on the mapping search.

    max_ii caps the II range; placement_attempts caps backtracking work per
    II attempt (each tried (node, tile, residue) triple counts as one).
    """

    max_ii: int = 32
    placement_attempts: int = 50_000


@dataclass(frozen=True)
class MapError:
    """Why a design could not be mapped, with a machine-readable hint."""

    code: str  # MISSING_FU_KIND, INSUFFICIENT_TILES, CONFIG_MEM_OVERFLOW,
    #            ROUTING_FAILURE, II_BOUND_EXCEEDED
    detail: str
    hint: dict = field(default_factory=dict)


@dataclass
class MappingResult:
    """A verified-shape mapping. schedule maps node id -> (tile, start);
    routes[i] is the tile path for kernel edge i, endpoints included."""

    ii: int
    schedule: dict[int, tuple[Tile, int]]
    routes: tuple[tuple[Tile, ...], ...]
    schedule_len: int


@dataclass(frozen=True)
class MappedDesign:
    """A design point together with its mapping evidence."""

    design: DesignPoint
    mapping: MappingResult
    trip_after: int
    speedup: float


def hop_distance(f: FabricSpec, a: Tile, b: Tile) -> int:
    """Shortest hop count between tiles under the fabric topology."""
    if a == b:
        return 0
    if f.topology is Topology.CROSSBAR:
        return 1
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    if f.topology is Topology.MESH:
        return dr + dc
    return max(dr, dc)  # KINGMESH


def route_path(f: FabricSpec, a: Tile, b: Tile) -> tuple[Tile, ...]:
    """Deterministic shortest path from a to b: breadth-first search
    expanding neighbors in sorted coordinate order."""
    if a == b:
        return (a,)
    parent: dict[Tile, Tile] = {a: a}
    queue: deque[Tile] = deque([a])
    while queue:
        cur = queue.popleft()
        if cur == b:
            break
        for nxt in sorted(neighbors(f, cur)):
            if nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    path = [b]
    while path[-1] != a:
        path.append(parent[path[-1]])
    path.reverse()
    return tuple(path)


# ---------------------------------------------------------------------------
# II lower bounds
# ---------------------------------------------------------------------------


def min_ii_bounds(k: KernelGraph, f: FabricSpec) -> tuple[int, int]:
    """(resource-bound, recurrence-bound) minimum initiation intervals.

    The resource bound is max over FU kinds of ceil(nodes of that kind /
    tiles supporting it); with uniform tiles every kind in fu_kinds is
    supported by all tiles. Every node kind must be supported (map_kernel
    reports MISSING_FU_KIND for the unsupported case before calling this).
    The recurrence bound is max over dependence cycles of
    ceil(cycle latency / cycle distance), computed by exact cycle
    enumeration for graphs up to 32 nodes and by an iterative positive-cycle
    search above that (both exact).
    """
    census: dict[FuKind, int] = {}
    for n in k.nodes:
        census[n.kind] = census.get(n.kind, 0) + 1
    res = 1
    for kind, count in census.items():
        if kind not in f.fu_kinds:
            raise ValueError(f"node kind {kind.name} not in fabric fu_kinds")
        res = max(res, math.ceil(count / f.tiles))
    return res, _rec_mii(k)


def _rec_mii(k: KernelGraph) -> int:
    if not any(e.distance > 0 for e in k.edges):
        return 1
    if len(k.nodes) <= _ENUMERATION_NODE_LIMIT:
        best = _rec_by_enumeration(k)
        if best is not None:
            return best
    return _rec_by_search(k)


def _rec_by_enumeration(k: KernelGraph) -> int | None:
    """Max over elementary cycles of ceil(sum latency / sum distance).
    Returns None if the path count explodes past a safety cap."""
    lat = {n.id: n.latency for n in k.nodes}
    adj: dict[int, list[tuple[int, int]]] = {n.id: [] for n in k.nodes}
    for e in k.edges:
        adj[e.src].append((e.dst, e.distance))
    for lst in adj.values():
        lst.sort()
    ids = sorted(adj)
    best = 1
    budget = _ENUMERATION_PATH_CAP

    def dfs(anchor: int, u: int, lat_sum: int, dist_sum: int, on_path: set[int]) -> bool:
        nonlocal best, budget
        for v, d in adj[u]:
            if v < anchor:
                continue
            budget -= 1
            if budget <= 0:
                return False
            if v == anchor:
                total_d = dist_sum + d
                if total_d > 0:
                    best = max(best, math.ceil((lat_sum + lat[u]) / total_d))
                continue
            if v in on_path:
                continue
            on_path.add(v)
            if not dfs(anchor, v, lat_sum + lat[u], dist_sum + d, on_path):
                return False
            on_path.discard(v)
        return True

    for a in ids:
        if not dfs(a, a, 0, 0, {a}):
            return None
    return best


def _rec_by_search(k: KernelGraph) -> int:
    """Smallest II with no positive cycle under weights lat(u) - II * d."""
    lat = {n.id: n.latency for n in k.nodes}
    ids = sorted(lat)
    index = {nid: i for i, nid in enumerate(ids)}
    edges = [(index[e.src], index[e.dst], lat[e.src], e.distance) for e in k.edges]
    n = len(ids)

    def has_positive_cycle(ii: int) -> bool:
        dist = [0] * n
        for round_no in range(n):
            changed = False
            for u, v, w_lat, d in edges:
                w = w_lat - ii * d
                if dist[u] + w > dist[v]:
                    dist[v] = dist[u] + w
                    changed = True
            if not changed:
                return False
        return True

    lo, hi = 1, max(1, sum(lat.values()))
    while lo < hi:
        mid = (lo + hi) // 2
        if has_positive_cycle(mid):
            lo = mid + 1
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Mapping search
# ---------------------------------------------------------------------------


class _BudgetExhausted(Exception):
    pass


class _Attempt:
    """One II attempt: DFS over (tile, residue) assignments with incremental
    longest-path feasibility over the dependence difference constraints."""

    def __init__(self, k: KernelGraph, f: FabricSpec, ii: int, attempts_left: int):
        self.k = k
        self.f = f
        self.ii = ii
        self.attempts_left = attempts_left
        self.lat = {n.id: n.latency for n in k.nodes}
        self.order = _schedule_order(k)
        self.tiles = [(r, c) for r in range(f.rows) for c in range(f.cols)]
        self.hops = {(a, b): hop_distance(f, a, b) for a in self.tiles for b in self.tiles}
        # Symmetry breaking for the root of the search tree. Any feasible
        # assignment can be rotated (all residues shifted mod II) so the
        # first node sits at residue 0, and mapped through any
        # hop-preserving tile symmetry: every crossbar tile is equivalent,
        # and grid reflections (plus transpose on square grids) preserve
        # both Manhattan and Chebyshev distances. So the first node only
        # ever needs residue 0 and one tile per symmetry orbit.
        if f.topology is Topology.CROSSBAR:
            self.first_tiles = self.tiles[:1]
        else:
            self.first_tiles = [t for t in self.tiles if 2 * t[0] <= f.rows - 1 and 2 * t[1] <= f.cols - 1]
            if f.rows == f.cols:
                self.first_tiles = [t for t in self.first_tiles if t[0] <= t[1]]
        # Dependence adjacency among kernel nodes (u -> v, latency(u), d).
        self.out_edges: dict[int, list[tuple[int, int, int]]] = {n.id: [] for n in k.nodes}
        self.in_edges: dict[int, list[tuple[int, int, int]]] = {n.id: [] for n in k.nodes}
        self.dfg_neighbors: dict[int, list[int]] = {n.id: [] for n in k.nodes}
        for e in k.edges:
            self.out_edges[e.src].append((e.dst, self.lat[e.src], e.distance))
            self.in_edges[e.dst].append((e.src, self.lat[e.src], e.distance))
            if e.src != e.dst:
                self.dfg_neighbors[e.src].append(e.dst)
                self.dfg_neighbors[e.dst].append(e.src)
        max_hop = max(f.rows + f.cols, 2)
        per_edge = math.ceil((max(self.lat.values()) + max_hop + ii - 1) / ii)
        self.dist_ub = max(1, per_edge * max(1, len(k.edges)))
        self.place: dict[int, tuple[Tile, int]] = {}  # id -> (tile, residue)
        self.q: dict[int, int] = {}  # id -> longest-path value
        self.occupied: dict[tuple[Tile, int], int] = {}
        self.slot_failures = 0
        self.dep_failures = 0
        self.windows = self._pairwise_windows()

    def _pairwise_windows(self) -> dict[int, list[tuple[int, int, int]]]:
        """Static start-time windows between nodes that share a dependence
        cycle. For u, v in one strongly connected component, the zero-hop
        longest paths D[u][v] and D[v][u] bound any schedule:
        D[u][v] <= start(v) - start(u) <= -D[v][u]. Checking a candidate
        slot against these windows refutes a dead branch when the slot is
        chosen, not levels deeper when the cycle finally closes.
        """
        succs = {nid: [dst for dst, _, _ in self.out_edges[nid]] for nid in self.out_edges}
        windows: dict[int, list[tuple[int, int, int]]] = {}
        neg_inf = float("-inf")
        for comp in _sccs(sorted(succs), succs):
            if len(comp) < 2:
                continue
            dist = {u: dict.fromkeys(comp, neg_inf) for u in comp}
            for u in comp:
                dist[u][u] = 0
                for v, lat_u, d in self.out_edges[u]:
                    if v in dist[u]:
                        dist[u][v] = max(dist[u][v], lat_u - d * self.ii)
            for w in comp:
                dw = dist[w]
                for u in comp:
                    duw = dist[u][w]
                    if duw == neg_inf:
                        continue
                    du = dist[u]
                    for v in comp:
                        cand = duw + dw[v]
                        if cand > du[v]:
                            du[v] = cand
            for v in comp:
                cons = []
                for u in comp:
                    if u != v and dist[u][v] != neg_inf and dist[v][u] != neg_inf:
                        cons.append((u, int(dist[u][v]), -int(dist[v][u])))
                if cons:
                    windows[v] = cons
        return windows

    def _window_allows(self, nid: int, tile: Tile, residue: int) -> bool:
        for u, lo, hi in self.windows.get(nid, ()):  # noqa: B006 - tuple default
            placed = self.place.get(u)
            if placed is None:
                continue
            tu, ru = placed
            h = self.hops[tu, tile]
            lo_h = lo + h
            hi_h = hi - h
            if lo_h > hi_h:
                return False
            # start(nid) - start(u) is congruent to the residue delta and
            # must land inside [lo_h, hi_h]
            if (residue - ru - lo_h) % self.ii > hi_h - lo_h:
                return False
        return True

    def run(self) -> dict[int, tuple[Tile, int]] | None:
        if self._place(0):
            return dict(self.place)
        return None

    def _place(self, idx: int) -> bool:
        if idx == len(self.order):
            return True
        nid = self.order[idx]
        if idx == 0:
            tiles = self.first_tiles
            residues: tuple[int, ...] | range = (0,)
        else:
            anchors = [self.place[m][0] for m in self.dfg_neighbors[nid] if m in self.place]
            hops = self.hops
            tiles = sorted(self.tiles, key=lambda t: (sum(hops[t, a] for a in anchors), t[0], t[1]))
            residues = range(self.ii)

        for tile in tiles:
            for residue in residues:
                if (tile, residue) in self.occupied:
                    self.slot_failures += 1
                    continue
                if not self._window_allows(nid, tile, residue):
                    self.dep_failures += 1
                    continue
                # only full placement attempts draw on the budget; the static
                # rejections above are two orders of magnitude cheaper
                self.attempts_left -= 1
                if self.attempts_left < 0:
                    raise _BudgetExhausted()
                undo = self._try_add(nid, tile, residue)
                if undo is None:
                    self.dep_failures += 1
                    continue
                if self._place(idx + 1):
                    return True
                self._undo(nid, tile, residue, undo)
        return False

    def _edge_weight(self, lat_u: int, d: int, tile_u: Tile, tile_v: Tile, r_u: int, r_v: int) -> int:
        num = lat_u + self.hops[tile_u, tile_v] + r_u - r_v
        return -((-num) // self.ii) - d

    def _try_add(self, nid: int, tile: Tile, residue: int) -> list[tuple[int, int]] | None:
        """Tentatively place nid; return an undo log, or None if the
        dependence system becomes infeasible (positive cycle)."""
        self.place[nid] = (tile, residue)
        self.occupied[(tile, residue)] = nid
        base = 0
        for u, lat_u, d in self.in_edges[nid]:
            if u in self.place and u != nid:
                tu, ru = self.place[u]
                base = max(base, self.q[u] + self._edge_weight(lat_u, d, tu, tile, ru, residue))
        self.q[nid] = base
        undo: list[tuple[int, int]] = []
        queue: deque[int] = deque([nid])
        # A longest simple path over the placed subgraph updates each node
        # fewer than len(place) times; more frequent updates (or a distance
        # past dist_ub) prove a positive cycle.
        update_cap = len(self.place)
        updates: dict[int, int] = {}
        while queue:
            u = queue.popleft()
            tu, ru = self.place[u]
            for v, lat_u, d in self.out_edges[u]:
                if v not in self.place:
                    continue
                tv, rv = self.place[v]
                w = self._edge_weight(lat_u, d, tu, tv, ru, rv)
                cand = self.q[u] + w
                if cand > self.q[v]:
                    seen = updates.get(v, 0) + 1
                    if cand > self.dist_ub or seen > update_cap:  # positive cycle
                        self._undo(nid, tile, residue, undo)
                        return None
                    updates[v] = seen
                    undo.append((v, self.q[v]))
                    self.q[v] = cand
                    queue.append(v)
        return undo

    def _undo(self, nid: int, tile: Tile, residue: int, undo: list[tuple[int, int]]) -> None:
        for v, old in reversed(undo):
            self.q[v] = old
        del self.place[nid]
        del self.occupied[(tile, residue)]
        self.q.pop(nid, None)


def _sccs(ids: list[int], succs: dict[int, list[int]]) -> list[list[int]]:
    """Strongly connected components (iterative Tarjan), deterministic."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in ids:
        if root in index:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            descended = False
            while i < len(succs[v]):
                w = succs[v][i]
                i += 1
                if w not in index:
                    work.append((v, i))
                    work.append((w, 0))
                    descended = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if descended:
                continue
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(sorted(comp))
    return out


def _schedule_order(k: KernelGraph) -> list[int]:
    """Node ids ordered by (ASAP level over distance-0 edges, id)."""
    lat = {n.id: n.latency for n in k.nodes}
    preds: dict[int, list[int]] = {n.id: [] for n in k.nodes}
    succs: dict[int, list[int]] = {n.id: [] for n in k.nodes}
    indeg = {n.id: 0 for n in k.nodes}
    for e in k.edges:
        if e.distance == 0:
            preds[e.dst].append(e.src)
            succs[e.src].append(e.dst)
            indeg[e.dst] += 1
    asap = {n.id: 0 for n in k.nodes}
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    queue = deque(ready)
    seen = 0
    while queue:
        u = queue.popleft()
        seen += 1
        for v in succs[u]:
            asap[v] = max(asap[v], asap[u] + lat[u])
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return sorted(asap, key=lambda nid: (asap[nid], nid))


def map_kernel(k: KernelGraph, f: FabricSpec, budget: MapBudget | None = None) -> MappingResult | MapError:
    """Map kernel k onto fabric f, or explain why that is impossible.

    Deterministic; see module docstring for the search strategy and the
    meaning of each error code. Hints are machine-readable and drive the
    automatic repair rules.
    """
    budget = budget or MapBudget()
    missing = sorted({n.kind.name for n in k.nodes if n.kind not in f.fu_kinds})
    if missing:
        return MapError(
            "MISSING_FU_KIND",
            f"fabric lacks FU kind(s): {', '.join(missing)}",
            hint={"missing_kinds": missing},
        )
    res, rec = min_ii_bounds(k, f)
    if res > budget.max_ii:
        census: dict[FuKind, int] = {}
        for n in k.nodes:
            census[n.kind] = census.get(n.kind, 0) + 1
        required = max(math.ceil(c / budget.max_ii) for c in census.values())
        return MapError(
            "INSUFFICIENT_TILES",
            f"resource-bound min II {res} exceeds max_ii {budget.max_ii}",
            hint={"required_tiles": required},
        )
    if rec > budget.max_ii:
        return MapError(
            "II_BOUND_EXCEEDED",
            f"recurrence-bound min II {rec} exceeds max_ii {budget.max_ii}",
            hint={"min_ii": rec, "max_ii": budget.max_ii},
        )
    # Extra sound lower bound: n nodes need n distinct (tile, residue) slots.
    lower = max(res, rec, math.ceil(len(k.nodes) / f.tiles))
    last_dep_failures = 0
    budget_hit = False
    for ii in range(lower, budget.max_ii + 1):
        attempt = _Attempt(k, f, ii, budget.placement_attempts)
        try:
            placement = attempt.run()
        except _BudgetExhausted:
            budget_hit = True
            last_dep_failures = attempt.dep_failures
            continue
        last_dep_failures = attempt.dep_failures
        if placement is None:
            continue
        if ii > f.config_mem_depth:
            return MapError(
                "CONFIG_MEM_OVERFLOW",
                f"smallest feasible II {ii} exceeds config_mem_depth {f.config_mem_depth}",
                hint={"required_depth": ii},
            )
        return _build_result(k, f, ii, placement, attempt.q)
    if last_dep_failures > 0 and not budget_hit:
        return MapError(
            "ROUTING_FAILURE",
            f"no feasible placement with routed dependences up to max_ii {budget.max_ii}",
            hint={"topology": f.topology.name},
        )
    return MapError(
        "II_BOUND_EXCEEDED",
        f"no feasible II found in [{lower}, {budget.max_ii}]",
        hint={"min_ii": lower, "max_ii": budget.max_ii},
    )


def _build_result(
    k: KernelGraph,
    f: FabricSpec,
    ii: int,
    placement: dict[int, tuple[Tile, int]],
    q: dict[int, int],
) -> MappingResult:
    schedule: dict[int, tuple[Tile, int]] = {}
    for nid in sorted(placement):
        tile, residue = placement[nid]
        schedule[nid] = (tile, residue + ii * q[nid])
    lat = {n.id: n.latency for n in k.nodes}
    schedule_len = max(start + lat[nid] for nid, (_, start) in schedule.items())
    routes = tuple(
        route_path(f, schedule[e.src][0], schedule[e.dst][0]) for e in k.edges
    )
    return MappingResult(ii=ii, schedule=schedule, routes=routes, schedule_len=schedule_len)


# ---------------------------------------------------------------------------
# Independent verification and derived metrics
# ---------------------------------------------------------------------------


def check_mapping(k: KernelGraph, f: FabricSpec, m: MappingResult) -> list[str]:
    """Re-verify every mapping invariant from scratch.

    Shares no state with the search: adjacency comes from arch.neighbors,
    hop counts come from the stored route paths. Returns human-readable
    problem strings, empty when the mapping is valid.
    """
    problems: list[str] = []
    ids = {n.id for n in k.nodes}
    if set(m.schedule) != ids:
        problems.append(f"schedule covers {sorted(m.schedule)} but kernel has {sorted(ids)}")
        return problems
    if m.ii < 1:
        problems.append(f"ii {m.ii} must be >= 1")
        return problems
    if m.ii > f.config_mem_depth:
        problems.append(f"ii {m.ii} exceeds config_mem_depth {f.config_mem_depth}")
    lat = {n.id: n.latency for n in k.nodes}
    slots: dict[tuple[Tile, int], int] = {}
    for nid in sorted(m.schedule):
        (tile, start) = m.schedule[nid]
        r, c = tile
        if not (0 <= r < f.rows and 0 <= c < f.cols):
            problems.append(f"node {nid} placed off-grid at {tile}")
            continue
        if start < 0:
            problems.append(f"node {nid} start {start} negative")
        slot = (tile, start % m.ii)
        if slot in slots:
            problems.append(f"nodes {slots[slot]} and {nid} share slot {slot}")
        else:
            slots[slot] = nid
    if len(m.routes) != len(k.edges):
        problems.append(f"{len(m.routes)} routes for {len(k.edges)} edges")
        return problems
    for i, e in enumerate(k.edges):
        path = m.routes[i]
        tile_u, start_u = m.schedule[e.src]
        tile_v, start_v = m.schedule[e.dst]
        if not path or path[0] != tile_u or path[-1] != tile_v:
            problems.append(f"edge {e.src}->{e.dst}: route endpoints {path} do not match placement")
            continue
        bad_step = False
        for a, b in zip(path, path[1:]):
            if b not in neighbors(f, a):
                problems.append(f"edge {e.src}->{e.dst}: route step {a}->{b} not a topology neighbor")
                bad_step = True
                break
        if bad_step:
            continue
        hops = len(path) - 1
        if start_v < start_u + lat[e.src] + hops - e.distance * m.ii:
            problems.append(
                f"edge {e.src}->{e.dst} (d={e.distance}): start {start_v} < "
                f"{start_u} + {lat[e.src]} + {hops} - {e.distance}*{m.ii}"
            )
    expected_len = max(start + lat[nid] for nid, (_, start) in m.schedule.items())
    if m.schedule_len != expected_len:
        problems.append(f"schedule_len {m.schedule_len} != max(start + latency) {expected_len}")
    return problems


def speedup(k_original: KernelGraph, m: MappingResult, trip_after: int) -> float:
    """Speedup over a single-issue in-order baseline.

    Baseline cycles: original trip count times the sum of original node
    latencies (one op in flight at a time). CGRA cycles: one prologue of
    schedule_len plus II per remaining (transformed) iteration.
    """
    baseline = k_original.trip_count * k_original.total_latency()
    cgra = m.schedule_len + m.ii * (trip_after - 1)
    return baseline / cgra
