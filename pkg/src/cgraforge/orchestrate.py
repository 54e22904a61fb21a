"""Closed-loop run orchestration.

Each iteration drafts candidates, maps them (repairing failures), screens
the mapped ones down to a top-K, lets the selection controller pick a
winner, and logs everything as append-only JSONL events. The event log is
the single source of truth: resuming a run replays it to rebuild the
proposal window, the judge's lessons, the controller state, and the
best-so-far record, after which continued iterations produce byte-identical
events to a never-interrupted run (proposal randomness is re-derived per
iteration, never carried across events).

History records carry no timestamps; wall-clock data lives only in the
metrics file's meta block, so logs from identical runs are identical files.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .agents import (
    AgentBackend,
    BackendKind,
    DesignOutcome,
    DesignSpaceBounds,
    FixFailure,
    FixableError,
    Lesson,
    LessonCandidate,
    ProposalRequest,
    coarse_judge,
    error_payload,
    fix_design,
    llm_select,
    llm_update,
    make_fine_judge,
    propose,
)
from .arch import (
    DesignPoint,
    FabricSpec,
    FuKind,
    Provenance,
    SwParams,
    Topology,
    serialize_design,
    validate_design,
)
from .costs import (
    CostCoeffs,
    EvalReport,
    Objective,
    ObjectiveMode,
    load_cost_coeffs,
    tool_evaluate,
    tool_select,
)
from .kernel import KernelGraph, TransformError, apply_sw_params, load_kernel, summarize
from .mapper import MapBudget, MapError, MappedDesign, map_kernel
from .mapper import speedup as compute_speedup
from .selection import SelectionConfig, SelectionState, ToolRound, select_step

SCHEMA_VERSION = 1

HISTORY_FILE = "history.jsonl"
METRICS_FILE = "metrics.json"
BEST_DESIGN_FILE = "best_design.json"


class RunConfigError(ValueError):
    """Malformed run config, or a resume that does not match its history."""


def _as_int(val, where: str) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        raise RunConfigError(f"{where} must be an integer, got {val!r}")
    return val


def _as_float(val, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise RunConfigError(f"{where} must be a number, got {val!r}")
    return float(val)


def _as_str(val, where: str) -> str:
    if not isinstance(val, str):
        raise RunConfigError(f"{where} must be a string, got {val!r}")
    return val


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    if not isinstance(data, dict):
        raise RunConfigError(f"{where} must be an object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise RunConfigError(f"unknown {where} keys: {', '.join(unknown)}")


# Runs map many candidate designs per iteration, so their default budget
# trades scheduling depth for pace. map_kernel's own default stays thorough
# for one-off mapping; pass an explicit budget to override either way.
RUN_PLACEMENT_ATTEMPTS = 2_000


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; JSON-loadable, strict about unknown keys."""

    kernel: str
    objective: Objective = Objective(ObjectiveMode.MIN_POWER, 1.5)
    iterations: int = 10
    proposals_per_iteration: int = 8
    top_k: int = 3
    seed: int = 0
    backend: AgentBackend = AgentBackend()
    selection: SelectionConfig = SelectionConfig()
    budget: MapBudget = MapBudget(placement_attempts=RUN_PLACEMENT_ATTEMPTS)
    max_fix_rounds: int = 4
    history_window: int = 24
    cost_coeffs: str | None = None

    def __post_init__(self):
        if not self.kernel:
            raise RunConfigError("kernel must be set")
        if self.iterations < 1:
            raise RunConfigError(f"iterations={self.iterations} must be >= 1")
        if self.proposals_per_iteration < 1:
            raise RunConfigError(f"proposals_per_iteration={self.proposals_per_iteration} must be >= 1")
        if self.top_k < 1:
            raise RunConfigError(f"top_k={self.top_k} must be >= 1")
        if self.max_fix_rounds < 0:
            raise RunConfigError(f"max_fix_rounds={self.max_fix_rounds} must be >= 0")
        if self.history_window < 1:
            raise RunConfigError(f"history_window={self.history_window} must be >= 1")
        if self.budget.max_ii < 1 or self.budget.placement_attempts < 1:
            raise RunConfigError("budget fields must be >= 1")
        if self.objective.min_speedup <= 0:
            raise RunConfigError(f"min_speedup={self.objective.min_speedup} must be positive")

    @staticmethod
    def from_json(data: dict) -> "RunConfig":
        _check_keys(
            data,
            {
                "kernel",
                "objective",
                "iterations",
                "proposals_per_iteration",
                "top_k",
                "seed",
                "backend",
                "selection",
                "budget",
                "max_fix_rounds",
                "history_window",
                "cost_coeffs",
            },
            "run config",
        )
        if "kernel" not in data:
            raise RunConfigError("run config needs a kernel")
        kernel = _as_str(data["kernel"], "kernel")
        seed = _as_int(data.get("seed", 0), "seed")

        obj_data = data.get("objective", {})
        _check_keys(obj_data, {"mode", "min_speedup"}, "objective")
        objective = Objective(
            mode=ObjectiveMode.parse(_as_str(obj_data.get("mode", "MIN_POWER"), "objective.mode")),
            min_speedup=_as_float(obj_data.get("min_speedup", 1.5), "objective.min_speedup"),
        )

        backend_data = data.get("backend", {})
        _check_keys(
            backend_data,
            {"kind", "base_url", "model", "temperature", "timeout_s", "max_retries"},
            "backend",
        )
        kind_token = _as_str(backend_data.get("kind", "HEURISTIC"), "backend.kind").strip().upper()
        try:
            kind = BackendKind[kind_token]
        except KeyError:
            raise RunConfigError(f"backend.kind must be HEURISTIC or LLM, got {kind_token!r}") from None
        base_url = backend_data.get("base_url")
        model = backend_data.get("model")
        backend = AgentBackend(
            kind=kind,
            seed=seed,
            base_url=None if base_url is None else _as_str(base_url, "backend.base_url"),
            model=None if model is None else _as_str(model, "backend.model"),
            temperature=_as_float(backend_data.get("temperature", 0.2), "backend.temperature"),
            timeout_s=_as_float(backend_data.get("timeout_s", 30.0), "backend.timeout_s"),
            max_retries=_as_int(backend_data.get("max_retries", 2), "backend.max_retries"),
        )

        try:
            selection = SelectionConfig.from_dict(data.get("selection", {}))
        except ValueError as e:
            raise RunConfigError(str(e)) from None

        budget_data = data.get("budget", {})
        _check_keys(budget_data, {"max_ii", "placement_attempts"}, "budget")
        budget = MapBudget(
            max_ii=_as_int(budget_data.get("max_ii", 32), "budget.max_ii"),
            placement_attempts=_as_int(
                budget_data.get("placement_attempts", RUN_PLACEMENT_ATTEMPTS),
                "budget.placement_attempts",
            ),
        )

        coeffs = data.get("cost_coeffs")
        return RunConfig(
            kernel=kernel,
            objective=objective,
            iterations=_as_int(data.get("iterations", 10), "iterations"),
            proposals_per_iteration=_as_int(data.get("proposals_per_iteration", 8), "proposals_per_iteration"),
            top_k=_as_int(data.get("top_k", 3), "top_k"),
            seed=seed,
            backend=backend,
            selection=selection,
            budget=budget,
            max_fix_rounds=_as_int(data.get("max_fix_rounds", 4), "max_fix_rounds"),
            history_window=_as_int(data.get("history_window", 24), "history_window"),
            cost_coeffs=None if coeffs is None else _as_str(coeffs, "cost_coeffs"),
        )

    def to_header_dict(self) -> dict:
        """Config as recorded in the run header. Excludes the iteration
        target on purpose: extending a run is not a config change."""
        return {
            "kernel": self.kernel,
            "objective": {"mode": self.objective.mode.name, "min_speedup": self.objective.min_speedup},
            "proposals_per_iteration": self.proposals_per_iteration,
            "top_k": self.top_k,
            "seed": self.seed,
            "backend": {
                "kind": self.backend.kind.name,
                "base_url": self.backend.base_url,
                "model": self.backend.model,
                "temperature": self.backend.temperature,
                "timeout_s": self.backend.timeout_s,
                "max_retries": self.backend.max_retries,
            },
            "selection": {
                "conf_threshold": self.selection.conf_threshold,
                "validation_interval": self.selection.validation_interval,
                "alpha": self.selection.alpha,
                "sigma": self.selection.sigma,
                "initial_confidence": self.selection.initial_confidence,
            },
            "budget": {"max_ii": self.budget.max_ii, "placement_attempts": self.budget.placement_attempts},
            "max_fix_rounds": self.max_fix_rounds,
            "history_window": self.history_window,
            "cost_coeffs": self.cost_coeffs,
        }


class History:
    """Append-only JSONL event log with a monotone sequence number."""

    def __init__(self, path: Path, seq: int = 0):
        self.path = path
        self.seq = seq

    def append(self, record: dict) -> None:
        self.seq += 1
        full = {"schema_version": SCHEMA_VERSION, "seq": self.seq}
        full.update(record)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(full, sort_keys=True) + "\n")


def read_history(path: Path) -> list[dict]:
    events = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise RunConfigError(f"{path}:{lineno}: invalid history line: {e}") from None
            if rec.get("seq") != len(events) + 1:
                raise RunConfigError(f"{path}:{lineno}: history sequence broken")
            events.append(rec)
    return events


def _design_dict(d: DesignPoint) -> dict:
    return json.loads(serialize_design(d))


def _design_from_dict(fields: dict, design_id: str, provenance: str, note: str) -> DesignPoint:
    return DesignPoint(
        fabric=FabricSpec(
            rows=fields["rows"],
            cols=fields["cols"],
            fu_kinds=frozenset(FuKind[k] for k in fields["fu_kinds"]),
            config_mem_depth=fields["config_mem_depth"],
            data_mem_kb=fields["data_mem_kb"],
            topology=Topology[fields["topology"]],
        ),
        sw=SwParams(unroll_factor=fields["unroll_factor"], vectorize_factor=fields["vectorize_factor"]),
        id=design_id,
        provenance=Provenance[provenance],
        note=note,
    )


def _report_dict(r: EvalReport) -> dict:
    return {
        "speedup": r.speedup,
        "power_mw": r.power_mw,
        "area_kum2": r.area_kum2,
        "power_efficiency": r.power_efficiency,
        "score": r.score,
        "feasible": r.feasible,
    }


def _lesson_dict(lesson: Lesson) -> dict:
    return {
        "tool_choice": lesson.tool_choice,
        "judge_choice": lesson.judge_choice,
        "agreed": lesson.agreed,
        "candidates": [
            {
                "design_id": lc.design_id,
                "base_score": lc.base_score,
                "features": list(lc.features),
                "tool_score": lc.tool_score,
            }
            for lc in lesson.candidates
        ],
    }


def _lesson_from_dict(data: dict) -> Lesson:
    return Lesson(
        candidates=tuple(
            LessonCandidate(
                design_id=lc["design_id"],
                base_score=lc["base_score"],
                features=tuple(lc["features"]),
                tool_score=lc["tool_score"],
            )
            for lc in data["candidates"]
        ),
        tool_choice=data["tool_choice"],
        judge_choice=data["judge_choice"],
        agreed=data["agreed"],
    )


def _error_code(err: FixableError) -> str:
    if isinstance(err, list):
        return "STRUCTURAL"
    return err.code


def _payload_code(payload: dict) -> str:
    return "STRUCTURAL" if payload.get("type") == "structural" else payload["code"]


def _iter_entry(
    iteration: int,
    proposals: int,
    mapped_pre: int,
    mapped_post: int,
    mode: str | None,
    final_choice: str | None,
    final_score: float | None,
    best_so_far: float | None,
) -> dict:
    return {
        "iteration": iteration,
        "proposals": proposals,
        "mapped_pre": mapped_pre,
        "mapped_post": mapped_post,
        "mode": mode,
        "final_choice": final_choice,
        "final_score": final_score,
        "best_so_far": best_so_far,
    }


@dataclass
class BestRecord:
    design_id: str
    iteration: int
    design: DesignPoint
    report: dict


@dataclass
class RunResult:
    metrics: dict
    best: BestRecord | None
    out_dir: Path
    history_path: Path
    metrics_path: Path
    best_design_path: Path | None


class _Runner:
    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.kernel: KernelGraph = load_kernel(cfg.kernel)
        self.ksum = summarize(self.kernel)
        self.coeffs: CostCoeffs = load_cost_coeffs(cfg.cost_coeffs)
        self.history = History(out_dir / HISTORY_FILE)
        self.judge = make_fine_judge(cfg.backend, cfg.objective)
        self.sel_state = SelectionState(confidence=cfg.selection.initial_confidence)
        self.outcomes: list[DesignOutcome] = []
        self.best: BestRecord | None = None
        self.iter_entries: list[dict] = []
        self.tool_rounds = 0
        self.llm_rounds = 0
        self.drafts_total = 0
        self.mapped_pre_total = 0
        self.mapped_post_total = 0
        self._map_cache: dict[str, tuple] = {}

    # ----- shared checking -------------------------------------------------

    def _check(self, d: DesignPoint) -> FixableError | None:
        """The repair loop's oracle: structural validation, then the loop
        transforms, then mapping. Caches successful mappings by design
        content so repaired duplicates are not re-mapped."""
        violations = validate_design(d)
        if violations:
            return violations
        key = serialize_design(d)
        if key in self._map_cache:
            return None
        try:
            tk = apply_sw_params(self.kernel, d.sw.unroll_factor, d.sw.vectorize_factor)
        except TransformError as e:
            return e
        res = map_kernel(tk, d.fabric, self.cfg.budget)
        if isinstance(res, MapError):
            return res
        sp = compute_speedup(self.kernel, res, tk.trip_count)
        self._map_cache[key] = (res, tk.trip_count, sp)
        return None

    def _mapped(self, d: DesignPoint) -> MappedDesign:
        res, trip_after, sp = self._map_cache[serialize_design(d)]
        return MappedDesign(design=d, mapping=res, trip_after=trip_after, speedup=sp)

    # ----- live iteration ---------------------------------------------------

    def run_iteration(self, it: int) -> None:
        cfg = self.cfg
        window = tuple(self.outcomes[-cfg.history_window:])
        req = ProposalRequest(
            kernel=self.ksum,
            objective=cfg.objective,
            history_window=window,
            count=cfg.proposals_per_iteration,
            bounds=DesignSpaceBounds(),
        )
        drafts = [
            dataclasses.replace(d, id=f"i{it:03d}c{k:02d}")
            for k, d in enumerate(propose(req, cfg.backend))
        ]

        mapped_pre = 0
        states: list[tuple[DesignPoint, MappedDesign | None, str | None]] = []
        for d in drafts:
            self.history.append(
                {
                    "type": "proposal",
                    "iteration": it,
                    "design_id": d.id,
                    "design": _design_dict(d),
                    "provenance": d.provenance.name,
                    "note": d.note,
                }
            )
            err = self._check(d)
            if err is None:
                mapped_pre += 1
                m = self._mapped(d)
                self.history.append(self._map_ok_event(it, m))
                states.append((d, m, None))
                continue
            self._emit_failure(it, d.id, err)
            fixed = fix_design(d, err, cfg.backend, self._check, max_rounds=cfg.max_fix_rounds)
            if isinstance(fixed, FixFailure):
                self.history.append(
                    {
                        "type": "fix",
                        "iteration": it,
                        "design_id": fixed.design.id,
                        "ok": False,
                        "rounds": fixed.rounds,
                        "design": _design_dict(fixed.design),
                        "provenance": fixed.design.provenance.name,
                        "note": fixed.design.note,
                        "error": error_payload(fixed.error),
                    }
                )
                states.append((fixed.design, None, _error_code(fixed.error)))
            else:
                m = self._mapped(fixed)
                rounds = fixed.note.count("repair:") - d.note.count("repair:")
                ev = self._map_ok_event(it, m)
                ev.update(
                    {
                        "type": "fix",
                        "ok": True,
                        "rounds": rounds,
                        "design": _design_dict(fixed),
                        "provenance": fixed.provenance.name,
                        "note": fixed.note,
                    }
                )
                self.history.append(ev)
                states.append((fixed, m, None))

        mapped_list = [m for _, m, _ in states if m is not None]
        self.drafts_total += len(drafts)
        self.mapped_pre_total += mapped_pre
        self.mapped_post_total += len(mapped_list)

        if not mapped_list:
            self.history.append({"type": "iteration_empty", "iteration": it})
            for d, m, code in states:
                self.outcomes.append(
                    DesignOutcome(iteration=it, design=d, score=None, feasible=False, error_code=code)
                )
            self.iter_entries.append(
                _iter_entry(it, len(drafts), mapped_pre, len(mapped_list), None, None, None, self._best_score())
            )
            return

        top = coarse_judge(mapped_list, cfg.objective, cfg.top_k, cfg.backend)
        by_id = {m.design.id: m for m in top}
        captured: dict = {}

        def judge_select() -> tuple[str, float]:
            return llm_select(top, self.judge)

        def tool_round() -> ToolRound:
            reports = tuple(tool_evaluate(top, self.kernel, cfg.objective, self.coeffs))
            choice, score = tool_select(reports)
            captured["reports"] = reports
            return ToolRound(reports=reports, choice=choice, score=score)

        def judge_update(round_: ToolRound, judge_choice: str) -> Lesson:
            return llm_update(self.judge, top, round_.reports, round_.choice, judge_choice)

        self.sel_state, rec, lesson = select_step(
            self.sel_state, cfg.selection, judge_select, tool_round, judge_update
        )
        self.history.append(
            {
                "type": "selection_step",
                "iteration": it,
                "candidates": [m.design.id for m in top],
                "trace": rec.to_dict(),
                "lesson": None if lesson is None else _lesson_dict(lesson),
            }
        )

        if rec.mode == "TOOL":
            self.tool_rounds += 1
            reports = list(captured["reports"])
            final_score = rec.tool_score
        else:
            self.llm_rounds += 1
            chosen = by_id[rec.final_choice]
            reports = tool_evaluate([chosen], self.kernel, cfg.objective, self.coeffs)
            final_score = reports[0].score
        for r in reports:
            self.history.append(
                {"type": "eval", "iteration": it, "design_id": r.design_id, "report": _report_dict(r)}
            )
            self._consider_best(it, r, by_id[r.design_id].design)

        scores = {r.design_id: r.score for r in reports}
        for d, m, code in states:
            self.outcomes.append(
                DesignOutcome(
                    iteration=it,
                    design=d,
                    score=scores.get(d.id),
                    feasible=m is not None,
                    error_code=code,
                )
            )
        self.iter_entries.append(
            _iter_entry(
                it,
                len(drafts),
                mapped_pre,
                len(mapped_list),
                rec.mode,
                rec.final_choice,
                final_score,
                self._best_score(),
            )
        )

    def _map_ok_event(self, it: int, m: MappedDesign) -> dict:
        return {
            "type": "map_result",
            "iteration": it,
            "design_id": m.design.id,
            "ok": True,
            "ii": m.mapping.ii,
            "schedule_len": m.mapping.schedule_len,
            "nodes": len(m.mapping.schedule),
            "trip_after": m.trip_after,
            "speedup": m.speedup,
        }

    def _emit_failure(self, it: int, design_id: str, err: FixableError) -> None:
        if isinstance(err, MapError):
            self.history.append(
                {
                    "type": "map_result",
                    "iteration": it,
                    "design_id": design_id,
                    "ok": False,
                    "error": error_payload(err),
                }
            )
        else:
            stage = "validate" if isinstance(err, list) else "transform"
            self.history.append(
                {
                    "type": "violation",
                    "iteration": it,
                    "design_id": design_id,
                    "stage": stage,
                    "error": error_payload(err),
                }
            )

    def _consider_best(self, it: int, r: EvalReport, design: DesignPoint) -> None:
        if not r.feasible:
            return
        if self.best is None or (r.score, r.design_id) < (self.best.report["score"], self.best.design_id):
            self.best = BestRecord(design_id=r.design_id, iteration=it, design=design, report=_report_dict(r))

    def _best_score(self) -> float | None:
        return None if self.best is None else self.best.report["score"]

    # ----- replay (resume) ---------------------------------------------------

    def replay(self, events: list[dict]) -> int:
        """Rebuild runner state from an event log; returns the last
        completed iteration."""
        if not events or events[0].get("type") != "run_header":
            raise RunConfigError("history is missing its run_header record")
        header = events[0].get("config")
        if header != self.cfg.to_header_dict():
            raise RunConfigError("config does not match the run being resumed (only iterations may change)")

        groups: list[tuple[int, list[dict]]] = []
        for ev in events[1:]:
            it = ev.get("iteration")
            if not isinstance(it, int):
                raise RunConfigError(f"history event seq={ev.get('seq')} has no iteration")
            if groups and groups[-1][0] == it:
                groups[-1][1].append(ev)
            elif it == (groups[-1][0] + 1 if groups else 1):
                groups.append((it, [ev]))
            else:
                raise RunConfigError(f"history iterations are not contiguous at iteration {it}")

        last = 0
        for it, evts in groups:
            closed = any(e["type"] in ("selection_step", "iteration_empty") for e in evts)
            if not closed:
                raise RunConfigError(f"history ends mid-iteration {it}; cannot resume safely")
            self._replay_iteration(it, evts)
            last = it
        self.history.seq = events[-1]["seq"]
        return last

    def _replay_iteration(self, it: int, evts: list[dict]) -> None:
        order: list[str] = []
        designs: dict[str, DesignPoint] = {}
        map_ok: set[str] = set()
        fix_ok: set[str] = set()
        fail_code: dict[str, str] = {}
        scores: dict[str, float] = {}
        sel_ev: dict | None = None
        empty = False

        for ev in evts:
            kind = ev["type"]
            if kind == "proposal":
                order.append(ev["design_id"])
                designs[ev["design_id"]] = _design_from_dict(
                    ev["design"], ev["design_id"], ev["provenance"], ev["note"]
                )
            elif kind == "fix":
                did = ev["design_id"]
                designs[did] = _design_from_dict(ev["design"], did, ev["provenance"], ev["note"])
                if ev["ok"]:
                    fix_ok.add(did)
                else:
                    fail_code[did] = _payload_code(ev["error"])
            elif kind == "map_result" and ev["ok"]:
                map_ok.add(ev["design_id"])
            elif kind == "eval":
                scores[ev["design_id"]] = ev["report"]["score"]
                if ev["report"]["feasible"]:
                    r = ev["report"]
                    if self.best is None or (r["score"], ev["design_id"]) < (
                        self.best.report["score"],
                        self.best.design_id,
                    ):
                        self.best = BestRecord(
                            design_id=ev["design_id"],
                            iteration=it,
                            design=designs[ev["design_id"]],
                            report=dict(r),
                        )
            elif kind == "selection_step":
                sel_ev = ev
            elif kind == "iteration_empty":
                empty = True

        mapped_pre = len(map_ok)
        mapped_post = mapped_pre + len(fix_ok)
        self.drafts_total += len(order)
        self.mapped_pre_total += mapped_pre
        self.mapped_post_total += mapped_post

        for did in order:
            feasible = did in map_ok or did in fix_ok
            self.outcomes.append(
                DesignOutcome(
                    iteration=it,
                    design=designs[did],
                    score=scores.get(did),
                    feasible=feasible,
                    error_code=None if feasible else fail_code.get(did),
                )
            )

        if empty or sel_ev is None:
            self.iter_entries.append(
                _iter_entry(it, len(order), mapped_pre, mapped_post, None, None, None, self._best_score())
            )
            return

        trace = sel_ev["trace"]
        if sel_ev.get("lesson") is not None:
            self.judge.replay(_lesson_from_dict(sel_ev["lesson"]))
        self.sel_state = SelectionState(iteration=trace["iteration"], confidence=trace["confidence_after"])
        if trace["mode"] == "TOOL":
            self.tool_rounds += 1
            final_score = trace["tool_score"]
        else:
            self.llm_rounds += 1
            final_score = scores[trace["final_choice"]]
        self.iter_entries.append(
            _iter_entry(
                it,
                len(order),
                mapped_pre,
                mapped_post,
                trace["mode"],
                trace["final_choice"],
                final_score,
                self._best_score(),
            )
        )

    # ----- metrics ------------------------------------------------------------

    def build_metrics(self, started_at: str, duration_s: float) -> dict:
        cfg = self.cfg
        best = None
        if self.best is not None:
            best = {
                "design_id": self.best.design_id,
                "iteration": self.best.iteration,
                **self.best.report,
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": cfg.kernel,
            "objective": {"mode": cfg.objective.mode.name, "min_speedup": cfg.objective.min_speedup},
            "seed": cfg.seed,
            "backend": cfg.backend.kind.name,
            "iterations_run": len(self.iter_entries),
            "sr1": (self.mapped_pre_total / self.drafts_total) if self.drafts_total else 0.0,
            "sr2": (self.mapped_post_total / self.drafts_total) if self.drafts_total else 0.0,
            "tool_rounds": self.tool_rounds,
            "llm_rounds": self.llm_rounds,
            "final_confidence": self.sel_state.confidence,
            "feasible": self.best is not None,
            "best": best,
            "iterations": list(self.iter_entries),
            "meta": {
                "started_at": started_at,
                "duration_s": duration_s,
            },
        }


def run(cfg: RunConfig, out_dir: str | Path, resume: bool = False) -> RunResult:
    """Execute (or extend) a run, leaving history.jsonl, metrics.json, and
    best_design.json in out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hist_path = out / HISTORY_FILE
    started_at = datetime.now(timezone.utc).isoformat()
    t0 = time.monotonic()

    runner = _Runner(cfg, out)
    start_iter = 1
    if hist_path.exists() and hist_path.stat().st_size > 0:
        if not resume:
            raise RunConfigError(f"{hist_path} already exists; resume the run or pick a fresh directory")
        start_iter = runner.replay(read_history(hist_path)) + 1
    else:
        if resume:
            raise RunConfigError(f"cannot resume: no history at {hist_path}")
        runner.history.append({"type": "run_header", "config": cfg.to_header_dict()})

    for it in range(start_iter, cfg.iterations + 1):
        runner.run_iteration(it)

    metrics = runner.build_metrics(started_at, time.monotonic() - t0)
    metrics_path = out / METRICS_FILE
    metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    best_path = None
    if runner.best is not None:
        best_path = out / BEST_DESIGN_FILE
        best_path.write_text(serialize_design(runner.best.design), encoding="utf-8")

    return RunResult(
        metrics=metrics,
        best=runner.best,
        out_dir=out,
        history_path=hist_path,
        metrics_path=metrics_path,
        best_design_path=best_path,
    )
