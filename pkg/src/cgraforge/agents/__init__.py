"""Agent layer: proposal, repair, and judging, in heuristic and LLM flavors.

Both backends implement the same four roles behind one interface:

* propose      - draft candidate design points from a kernel summary and
                 recent history,
* fix_design   - iteratively repair a design that failed validation,
                 transformation, or mapping,
* coarse_judge - cheap top-K filter over mapped candidates,
* fine judge   - score estimate and pick among the top-K (the counterpart
                 the selection controller calibrates against the tool), plus
                 a lesson store it learns from.

The heuristic backend is fully deterministic given its seed. The LLM backend
degrades to the heuristic one on any transport, parse, or validation
failure, so the pipeline never aborts because an agent misbehaved. Agent
calls are issued sequentially in candidate order (the pipeline stays
deterministic; independent calls could be parallelized without changing
results). History and the lesson store have a single writer: the
orchestrator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence, Union

from ..arch import (
    COLS_MAX,
    COLS_MIN,
    ROWS_MAX,
    ROWS_MIN,
    UNROLL_MAX,
    UNROLL_MIN,
    VECTORIZE_MAX,
    VECTORIZE_MIN,
    DesignPoint,
    StructuralViolation,
    Topology,
)
from ..costs import EvalReport, Objective
from ..kernel import KernelSummary, TransformError
from ..mapper import MapError, MappedDesign

#: Wiring multipliers for the coefficient-free coarse proxy. These are fixed
#: structural constants, deliberately independent of the cost model config.
PROXY_WIRING = {Topology.MESH: 1.0, Topology.KINGMESH: 1.2, Topology.CROSSBAR: 1.5}

#: Lesson store capacity (FIFO eviction).
LESSON_CAP = 256


class BackendKind(Enum):
    HEURISTIC = "HEURISTIC"
    LLM = "LLM"


@dataclass(frozen=True)
class AgentBackend:
    """Which implementation answers agent calls, and how.

    LLM connection settings fall back to the MALTA_LLM_URL / MALTA_LLM_MODEL
    environment variables; the bearer token is read from MALTA_LLM_TOKEN and
    never appears in config files.
    """

    kind: BackendKind = BackendKind.HEURISTIC
    seed: int = 0
    base_url: str | None = None
    model: str | None = None
    temperature: float = 0.2
    timeout_s: float = 30.0
    max_retries: int = 2


@dataclass(frozen=True)
class DesignSpaceBounds:
    """Clamp ranges for proposal fields (validity bounds, not preferences)."""

    rows: tuple[int, int] = (ROWS_MIN, ROWS_MAX)
    cols: tuple[int, int] = (COLS_MIN, COLS_MAX)
    config_mem_depth: tuple[int, int] = (1, 32)
    unroll_factor: tuple[int, int] = (UNROLL_MIN, UNROLL_MAX)
    vectorize_factor: tuple[int, int] = (VECTORIZE_MIN, VECTORIZE_MAX)


@dataclass(frozen=True)
class DesignOutcome:
    """What History remembers about one candidate, as shown to agents."""

    iteration: int
    design: DesignPoint
    score: float | None = None
    feasible: bool | None = None
    error_code: str | None = None


@dataclass(frozen=True)
class ProposalRequest:
    kernel: KernelSummary
    objective: Objective
    history_window: tuple[DesignOutcome, ...]
    count: int
    bounds: DesignSpaceBounds = DesignSpaceBounds()


#: Everything the repair loop can be asked to fix.
FixableError = Union[list[StructuralViolation], TransformError, MapError]


@dataclass(frozen=True)
class FixFailure:
    """Repair gave up: the last attempted design and the surviving error."""

    design: DesignPoint
    rounds: int
    error: FixableError


def error_payload(err: FixableError) -> dict:
    """JSON-safe rendering of any fixable error, shared by history events
    and LLM repair prompts."""
    if isinstance(err, list):
        return {
            "type": "structural",
            "violations": [{"code": v.code, "field": v.field, "message": v.message} for v in err],
        }
    if isinstance(err, TransformError):
        return {
            "type": "transform",
            "code": err.code,
            "message": err.message,
            "factor_field": err.factor_field,
            "factor": err.factor,
            "trip_count": err.trip_count,
        }
    if isinstance(err, MapError):
        return {"type": "mapping", "code": err.code, "detail": err.detail, "hint": dict(err.hint)}
    raise TypeError(f"unsupported error type: {type(err).__name__}")


@dataclass(frozen=True)
class LessonCandidate:
    """One candidate inside a lesson: judge inputs plus the tool's answer."""

    design_id: str
    base_score: float
    features: tuple[float, ...]
    tool_score: float


@dataclass(frozen=True)
class Lesson:
    candidates: tuple[LessonCandidate, ...]
    tool_choice: str
    judge_choice: str
    agreed: bool


class FineJudge(Protocol):
    """Score-and-pick counterpart to the tool evaluator."""

    def select(self, cands: Sequence[MappedDesign]) -> tuple[str, float]: ...

    def update(
        self,
        cands: Sequence[MappedDesign],
        reports: Sequence[EvalReport],
        tool_choice: str,
        judge_choice: str,
    ) -> Lesson: ...

    def replay(self, lesson: Lesson) -> None: ...


def proxy_score(cand: MappedDesign) -> float:
    """The pinned coarse proxy: mapper speedup over the structural power
    proxy tiles * |fu_kinds| * wiring. Higher is better."""
    f = cand.design.fabric
    return cand.speedup / (f.tiles * len(f.fu_kinds) * PROXY_WIRING[f.topology])


def propose(req: ProposalRequest, backend: AgentBackend) -> list[DesignPoint]:
    """Draft up to req.count design points (placeholder ids; the orchestrator
    assigns run-unique ids). Drafts need not be valid; fields are clamped
    into bounds but cross-field invariants are validation's job."""
    from . import heuristic, llm

    if backend.kind is BackendKind.LLM:
        return llm.propose(req, backend)
    return heuristic.propose(req, backend.seed)


def fix_design(
    d: DesignPoint,
    err: FixableError,
    backend: AgentBackend,
    check: Callable[[DesignPoint], FixableError | None],
    max_rounds: int = 4,
) -> DesignPoint | FixFailure:
    """Repair loop: apply one repair per round, re-check, stop on success.

    `check` re-runs validation, transforms, and mapping, returning None on
    success or the next error to fix. Repaired designs keep their id and are
    marked REPAIRED with a note chain of applied rules.
    """
    from . import heuristic, llm

    cur, cur_err = d, err
    for _ in range(max_rounds):
        if backend.kind is BackendKind.LLM:
            nxt = llm.repair_once(cur, cur_err, backend)
        else:
            nxt = heuristic.repair_once(cur, cur_err)
        outcome = check(nxt)
        if outcome is None:
            return nxt
        cur, cur_err = nxt, outcome
    return FixFailure(design=cur, rounds=max_rounds, error=cur_err)


def coarse_judge(
    cands: Sequence[MappedDesign],
    obj: Objective,
    k: int,
    backend: AgentBackend,
) -> list[MappedDesign]:
    """Top-k mapped candidates, best first. The heuristic backend ranks by
    the pinned proxy (ties on design id); the LLM backend may reorder but is
    validated against the candidate set and falls back to the proxy."""
    from . import heuristic, llm

    if backend.kind is BackendKind.LLM:
        return llm.coarse_rank(cands, obj, backend)[:k]
    return heuristic.coarse_rank(cands)[:k]


def make_fine_judge(backend: AgentBackend, obj: Objective) -> FineJudge:
    from . import heuristic, llm

    if backend.kind is BackendKind.LLM:
        return llm.LlmFineJudge(backend, obj)
    return heuristic.HeuristicFineJudge(obj)


def llm_select(k_designs: Sequence[MappedDesign], judge: FineJudge) -> tuple[str, float]:
    """The judge's (choice id, score estimate); score semantics match
    tool_select (lower is better, same units)."""
    return judge.select(k_designs)


def llm_update(
    judge: FineJudge,
    k_designs: Sequence[MappedDesign],
    reports: Sequence[EvalReport],
    tool_choice: str,
    judge_choice: str,
) -> Lesson:
    """Feed one tool-validated round back into the judge's lesson store."""
    return judge.update(k_designs, reports, tool_choice, judge_choice)
