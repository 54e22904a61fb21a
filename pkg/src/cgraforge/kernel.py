"""Loop kernels as dataflow graphs, plus the loop transforms applied to them.

A kernel models the innermost loop body of a compute kernel: one node per
operation, distance-annotated edges for dependences (distance 0 = same
iteration, distance d >= 1 = loop-carried across d iterations), and a trip
count. Multi-loop kernels are flattened to their innermost body with
trip_count set to the product of the loop bounds at a fixed, documented
problem size; see data/kernels/ for the shipped corpus.

Transform semantics:

* unroll(k, n) replicates the body n times. Copy c of original node i gets
  id i*n + c. A carried edge (u -> v, d) becomes, for each copy c, an edge
  from copy c of u to copy (c+d) % n of v with distance (c+d) // n (so it
  turns into a same-iteration edge whenever c+d < n).
* vectorize(k, n) keeps the graph shape, multiplies every node's lane width
  by n, divides trip_count by n, and divides carried distances by n. Lanes
  are independent, so a carried distance that is not a positive multiple of
  n would cross lanes and cannot be expressed; such kernels reject the
  transform.

Both transforms require the factor to divide trip_count exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .arch import FuKind

LATENCY_MIN, LATENCY_MAX = 1, 8

#: Kernels shipped with the package. The *_mix entries are synthetic
#: composites representative of one application domain each (embedded DSP,
#: ML inference, HPC), not measurements of any particular workload.
BUILTIN_KERNELS = (
    "conv",
    "embedded_mix",
    "fft",
    "fir",
    "gemm",
    "hpc_mix",
    "latnrm",
    "ml_mix",
    "mvt",
    "relu",
    "spmv",
)


class KernelError(Exception):
    """Malformed kernel graph or file."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class TransformError(KernelError):
    """A loop transform was requested with illegal parameters.

    Carries enough structure (which factor field, the factor value, the trip
    count seen by the transform) for automatic repair to act on."""

    def __init__(
        self,
        code: str,
        message: str,
        factor_field: str = "",
        factor: int = 0,
        trip_count: int = 0,
    ):
        super().__init__(code, message)
        self.factor_field = factor_field
        self.factor = factor
        self.trip_count = trip_count


class UnknownKernelError(KernelError):
    def __init__(self, name: str):
        super().__init__("UNKNOWN_KERNEL", f"unknown kernel {name!r}; known: {', '.join(BUILTIN_KERNELS)}")
        self.name = name


@dataclass(frozen=True)
class DfgNode:
    """One operation instance in the loop body.

    lane_width > 1 marks a SIMD-widened node produced by vectorize; it only
    affects the cost model, never scheduling.
    """

    id: int
    kind: FuKind
    latency: int
    lane_width: int = 1


@dataclass(frozen=True)
class DfgEdge:
    """Dependence from src to dst, distance iterations apart (0 = same)."""

    src: int
    dst: int
    distance: int = 0


@dataclass(frozen=True)
class KernelGraph:
    name: str
    nodes: tuple[DfgNode, ...]
    edges: tuple[DfgEdge, ...]
    trip_count: int

    def node_by_id(self, node_id: int) -> DfgNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def op_census(self) -> dict[str, int]:
        """Count of nodes per FU kind name, keys sorted."""
        census: dict[str, int] = {}
        for n in self.nodes:
            census[n.kind.name] = census.get(n.kind.name, 0) + 1
        return dict(sorted(census.items()))

    def carried_edges(self) -> tuple[DfgEdge, ...]:
        return tuple(e for e in self.edges if e.distance > 0)

    def total_latency(self) -> int:
        return sum(n.latency for n in self.nodes)


def validate_graph(k: KernelGraph) -> None:
    """Raise KernelError on any broken graph invariant."""
    ids = [n.id for n in k.nodes]
    if len(set(ids)) != len(ids):
        raise KernelError("DUPLICATE_NODE_ID", f"kernel {k.name}: duplicate node ids")
    if not k.nodes:
        raise KernelError("EMPTY_GRAPH", f"kernel {k.name}: no nodes")
    if k.trip_count < 1:
        raise KernelError("TRIP_RANGE", f"kernel {k.name}: trip_count must be >= 1")
    by_id = {n.id: n for n in k.nodes}
    for n in k.nodes:
        if not (LATENCY_MIN <= n.latency <= LATENCY_MAX):
            raise KernelError(
                "LATENCY_RANGE",
                f"kernel {k.name}: node {n.id} latency {n.latency} outside [{LATENCY_MIN}, {LATENCY_MAX}]",
            )
        if n.lane_width < 1:
            raise KernelError("LANE_RANGE", f"kernel {k.name}: node {n.id} lane_width must be >= 1")
    for e in k.edges:
        if e.src not in by_id or e.dst not in by_id:
            raise KernelError("DANGLING_EDGE", f"kernel {k.name}: edge {e.src}->{e.dst} references missing node")
        if e.distance < 0:
            raise KernelError("DISTANCE_RANGE", f"kernel {k.name}: edge {e.src}->{e.dst} distance must be >= 0")
        if e.src == e.dst and e.distance == 0:
            raise KernelError("SELF_EDGE", f"kernel {k.name}: same-iteration self edge on node {e.src}")
        # Cross-node carried edges feed loop-carried values, which only PHI
        # nodes anchor; a node accumulating into itself is exempt.
        if e.distance > 0 and e.src != e.dst and by_id[e.dst].kind is not FuKind.PHI:
            raise KernelError(
                "CARRIED_TARGET_NOT_PHI",
                f"kernel {k.name}: carried edge {e.src}->{e.dst} must target a PHI node",
            )
    _assert_zero_distance_acyclic(k)


def _assert_zero_distance_acyclic(k: KernelGraph) -> None:
    adj: dict[int, list[int]] = {n.id: [] for n in k.nodes}
    for e in k.edges:
        if e.distance == 0:
            adj[e.src].append(e.dst)
    state: dict[int, int] = {}  # 0 visiting, 1 done

    def visit(u: int, stack: list[int]) -> None:
        state[u] = 0
        stack.append(u)
        for v in adj[u]:
            if state.get(v) == 0:
                raise KernelError(
                    "ZERO_DISTANCE_CYCLE",
                    f"kernel {k.name}: same-iteration cycle through nodes {stack + [v]}",
                )
            if v not in state:
                visit(v, stack)
        stack.pop()
        state[u] = 1

    for n in k.nodes:
        if n.id not in state:
            visit(n.id, [])


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def unroll(k: KernelGraph, factor: int) -> KernelGraph:
    """Replicate the loop body `factor` times; see module docstring for the
    exact edge rewrite. unroll(k, 1) is the identity."""
    if factor < 1:
        raise TransformError(
            "NON_DIVISIBLE_FACTOR",
            f"unroll factor {factor} must be >= 1",
            factor_field="unroll_factor",
            factor=factor,
            trip_count=k.trip_count,
        )
    if factor == 1:
        return k
    if k.trip_count % factor != 0:
        raise TransformError(
            "NON_DIVISIBLE_FACTOR",
            f"unroll factor {factor} does not divide trip_count {k.trip_count}",
            factor_field="unroll_factor",
            factor=factor,
            trip_count=k.trip_count,
        )
    nodes = tuple(
        DfgNode(id=n.id * factor + c, kind=n.kind, latency=n.latency, lane_width=n.lane_width)
        for n in k.nodes
        for c in range(factor)
    )
    edges: list[DfgEdge] = []
    for e in k.edges:
        for c in range(factor):
            if e.distance == 0:
                edges.append(DfgEdge(e.src * factor + c, e.dst * factor + c, 0))
            else:
                dst_copy = (c + e.distance) % factor
                new_distance = (c + e.distance) // factor
                edges.append(DfgEdge(e.src * factor + c, e.dst * factor + dst_copy, new_distance))
    return KernelGraph(
        name=f"{k.name}.u{factor}",
        nodes=nodes,
        edges=tuple(edges),
        trip_count=k.trip_count // factor,
    )


def vectorize(k: KernelGraph, factor: int) -> KernelGraph:
    """Widen every node to `factor` SIMD lanes; see module docstring.

    Illegal when any carried distance is not a positive multiple of the
    factor (the dependence would cross lanes)."""
    if factor < 1:
        raise TransformError(
            "NON_DIVISIBLE_FACTOR",
            f"vectorize factor {factor} must be >= 1",
            factor_field="vectorize_factor",
            factor=factor,
            trip_count=k.trip_count,
        )
    if factor == 1:
        return k
    if k.trip_count % factor != 0:
        raise TransformError(
            "NON_DIVISIBLE_FACTOR",
            f"vectorize factor {factor} does not divide trip_count {k.trip_count}",
            factor_field="vectorize_factor",
            factor=factor,
            trip_count=k.trip_count,
        )
    for e in k.edges:
        if e.distance > 0 and (e.distance < factor or e.distance % factor != 0):
            raise TransformError(
                "CARRIED_DEP_BLOCKS_VECTORIZATION",
                f"carried edge {e.src}->{e.dst} distance {e.distance} blocks vectorize by {factor}",
                factor_field="vectorize_factor",
                factor=factor,
                trip_count=k.trip_count,
            )
    nodes = tuple(replace(n, lane_width=n.lane_width * factor) for n in k.nodes)
    edges = tuple(
        DfgEdge(e.src, e.dst, e.distance // factor) if e.distance > 0 else e for e in k.edges
    )
    return KernelGraph(
        name=f"{k.name}.v{factor}",
        nodes=nodes,
        edges=edges,
        trip_count=k.trip_count // factor,
    )


def apply_sw_params(k: KernelGraph, unroll_factor: int, vectorize_factor: int) -> KernelGraph:
    """Canonical transform order: unroll first, then vectorize."""
    return vectorize(unroll(k, unroll_factor), vectorize_factor)


# ---------------------------------------------------------------------------
# Files and built-in corpus
# ---------------------------------------------------------------------------


def parse_kernel(text: str, name_hint: str = "kernel") -> KernelGraph:
    """Parse a kernel JSON document and validate the resulting graph."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise KernelError("SYNTAX", f"invalid JSON: {e.msg} (line {e.lineno})") from None
    if not isinstance(payload, dict):
        raise KernelError("SYNTAX", "kernel file must contain a JSON object")
    allowed = {"name", "trip_count", "nodes", "edges"}
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise KernelError("UNKNOWN_FIELD", f"unknown field(s): {', '.join(unknown)}")
    missing = sorted(allowed - set(payload))
    if missing:
        raise KernelError("MISSING_FIELD", f"missing field(s): {', '.join(missing)}")
    if not isinstance(payload["name"], str):
        raise KernelError("BAD_TYPE", "name must be a string")

    def _int(value: object, what: str) -> int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise KernelError("BAD_TYPE", f"{what} must be an integer, got {value!r}")
        return value

    if not isinstance(payload["nodes"], list) or not isinstance(payload["edges"], list):
        raise KernelError("BAD_TYPE", "nodes and edges must be lists")
    nodes = []
    for raw in payload["nodes"]:
        if not isinstance(raw, dict) or set(raw) != {"id", "kind", "latency"}:
            raise KernelError("BAD_NODE", f"node entries need exactly id/kind/latency: {raw!r}")
        nodes.append(
            DfgNode(id=_int(raw["id"], "node id"), kind=FuKind.parse(raw["kind"]), latency=_int(raw["latency"], "latency"))
        )
    edges = []
    for raw in payload["edges"]:
        if not isinstance(raw, dict) or set(raw) != {"src", "dst", "distance"}:
            raise KernelError("BAD_EDGE", f"edge entries need exactly src/dst/distance: {raw!r}")
        edges.append(
            DfgEdge(src=_int(raw["src"], "edge src"), dst=_int(raw["dst"], "edge dst"), distance=_int(raw["distance"], "distance"))
        )
    k = KernelGraph(
        name=payload["name"],
        nodes=tuple(nodes),
        edges=tuple(edges),
        trip_count=_int(payload["trip_count"], "trip_count"),
    )
    validate_graph(k)
    return k


def load_kernel(name_or_path: str) -> KernelGraph:
    """Load a built-in kernel by name, or any kernel JSON file by path."""
    if name_or_path in BUILTIN_KERNELS:
        text = resources.files("cgraforge.data.kernels").joinpath(f"{name_or_path}.json").read_text("utf-8")
        return parse_kernel(text, name_hint=name_or_path)
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return parse_kernel(p.read_text("utf-8"), name_hint=p.stem)
    raise UnknownKernelError(name_or_path)


@dataclass(frozen=True)
class KernelSummary:
    """Compact kernel description handed to proposal agents."""

    name: str
    node_count: int
    op_census: dict[str, int]
    carried_edge_count: int
    carried_distance_gcd: int  # 0 when there are no carried edges
    trip_count: int
    total_latency: int


def summarize(k: KernelGraph) -> KernelSummary:
    import math

    g = 0
    for e in k.carried_edges():
        g = math.gcd(g, e.distance)
    return KernelSummary(
        name=k.name,
        node_count=len(k.nodes),
        op_census=k.op_census(),
        carried_edge_count=len(k.carried_edges()),
        carried_distance_gcd=g,
        trip_count=k.trip_count,
        total_latency=k.total_latency(),
    )
