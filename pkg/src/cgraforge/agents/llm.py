"""LLM-backed agents over an OpenAI-compatible chat completions endpoint.

Connection settings come from the backend record or the MALTA_LLM_URL /
MALTA_LLM_MODEL environment variables; the bearer token is read from
MALTA_LLM_TOKEN only. Every role degrades to the deterministic heuristic
backend on transport, parse, or validation failure: a flaky endpoint makes
a run slower and noisier, never dead. The HTTP POST function is injectable
so tests can fake the endpoint without a network.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
import string
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

from ..arch import (
    DesignPoint,
    FabricSpec,
    FuKind,
    Provenance,
    SwParams,
    Topology,
    serialize_design,
)
from ..costs import EvalReport, Objective
from ..mapper import MappedDesign
from . import (
    AgentBackend,
    FixableError,
    Lesson,
    ProposalRequest,
    error_payload,
    proxy_score,
)
from .heuristic import HeuristicFineJudge, clamp_design
from . import heuristic as _heuristic

log = logging.getLogger(__name__)

ENV_TOKEN = "MALTA_LLM_TOKEN"
ENV_URL = "MALTA_LLM_URL"
ENV_MODEL = "MALTA_LLM_MODEL"

#: (url, payload, headers, timeout_s) -> decoded response body.
PostFn = Callable[[str, dict, dict, float], dict]

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)


class LlmError(Exception):
    """Transport, endpoint, or response-shape failure from the LLM layer."""


def _requests_post(url: str, payload: dict, headers: dict, timeout_s: float) -> dict:
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
    resp.raise_for_status()
    return resp.json()


def extract_json(text: str):
    """Parse the model's JSON answer: the last fenced code block if any,
    otherwise the whole text."""
    blocks = _FENCE_RE.findall(text)
    raw = blocks[-1] if blocks else text
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise LlmError(f"response is not valid JSON: {e}") from e


@dataclass
class LlmClient:
    backend: AgentBackend
    post: PostFn | None = None

    def chat(self, prompt: str) -> str:
        base_url = self.backend.base_url or os.environ.get(ENV_URL)
        model = self.backend.model or os.environ.get(ENV_MODEL)
        if not base_url or not model:
            raise LlmError(f"LLM endpoint not configured (need {ENV_URL} and {ENV_MODEL})")
        url = base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.backend.temperature,
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(ENV_TOKEN)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        poster = self.post or _requests_post
        last: Exception | None = None
        for _ in range(max(1, self.backend.max_retries + 1)):
            try:
                body = poster(url, payload, headers, self.backend.timeout_s)
                return body["choices"][0]["message"]["content"]
            except Exception as e:  # noqa: BLE001 - any failure means retry
                last = e
        raise LlmError(f"chat request failed after retries: {last}")


def _render(template_name: str, **subs: str) -> str:
    tpl = resources.files("cgraforge.data.prompts").joinpath(template_name).read_text(encoding="utf-8")
    return string.Template(tpl).substitute(**subs)


def _design_dict(d: DesignPoint) -> dict:
    return json.loads(serialize_design(d))


def _objective_dict(obj: Objective) -> dict:
    return {"mode": obj.mode.name, "min_speedup": obj.min_speedup}


def _candidate_dict(c: MappedDesign) -> dict:
    return {
        "design_id": c.design.id,
        "design": _design_dict(c.design),
        "ii": c.mapping.ii,
        "schedule_len": c.mapping.schedule_len,
        "nodes": len(c.mapping.schedule),
        "trip_after": c.trip_after,
        "speedup": round(c.speedup, 6),
        "proxy_score": round(proxy_score(c), 6),
    }


def _draft_from_entry(entry: object) -> DesignPoint | None:
    """Lenient draft decoding: missing optional fields default, junk entries
    are dropped rather than failing the batch."""
    if not isinstance(entry, dict):
        return None
    try:
        kinds = frozenset(FuKind.parse(str(k)) for k in entry["fu_kinds"])
        fabric = FabricSpec(
            rows=int(entry["rows"]),
            cols=int(entry["cols"]),
            fu_kinds=kinds,
            config_mem_depth=int(entry["config_mem_depth"]),
            data_mem_kb=int(entry.get("data_mem_kb", 0)),
            topology=Topology.parse(str(entry["topology"])),
        )
        sw = SwParams(
            unroll_factor=int(entry.get("unroll_factor", 1)),
            vectorize_factor=int(entry.get("vectorize_factor", 1)),
        )
    except (KeyError, TypeError, ValueError):
        return None
    return DesignPoint(fabric=fabric, sw=sw, id="draft", provenance=Provenance.PROPOSED, note="proposal:llm")


def propose(req: ProposalRequest, backend: AgentBackend) -> list[DesignPoint]:
    """Ask the model for drafts; top up to req.count with heuristic drafts
    (which also covers the total-failure case)."""
    drafts: list[DesignPoint] = []
    try:
        prompt = _render(
            "proposer.txt",
            kernel=json.dumps(dataclasses.asdict(req.kernel), indent=2, sort_keys=True),
            objective=json.dumps(_objective_dict(req.objective), indent=2),
            bounds=json.dumps(dataclasses.asdict(req.bounds), indent=2),
            history=json.dumps(
                [
                    {
                        "iteration": o.iteration,
                        "design": _design_dict(o.design),
                        "score": o.score,
                        "feasible": o.feasible,
                        "error_code": o.error_code,
                    }
                    for o in req.history_window
                ],
                indent=2,
            ),
            count=str(req.count),
        )
        data = extract_json(LlmClient(backend).chat(prompt))
        entries = data.get("designs", []) if isinstance(data, dict) else []
        for entry in entries:
            d = _draft_from_entry(entry)
            if d is not None:
                drafts.append(clamp_design(d, req.bounds))
    except Exception as e:  # noqa: BLE001 - degrade, never abort the run
        log.warning("LLM proposer failed (%s); falling back to heuristic drafts", e)

    out: list[DesignPoint] = []
    seen: set[str] = set()
    for d in drafts + _heuristic.propose(req, backend.seed):
        key = serialize_design(d)
        if key not in seen:
            seen.add(key)
            out.append(d)
        if len(out) == req.count:
            break
    return out


def repair_once(d: DesignPoint, err: FixableError, backend: AgentBackend) -> DesignPoint:
    """One model-guided repair step; falls back to the rule table."""
    try:
        prompt = _render(
            "fixer.txt",
            design=json.dumps(_design_dict(d), indent=2),
            error=json.dumps(error_payload(err), indent=2),
        )
        data = extract_json(LlmClient(backend).chat(prompt))
        entry = data.get("design") if isinstance(data, dict) else None
        fixed = _draft_from_entry(entry)
        if fixed is None:
            raise LlmError("repair response has no usable design")
    except Exception as e:  # noqa: BLE001
        log.warning("LLM fixer failed (%s); falling back to heuristic repair", e)
        return _heuristic.repair_once(d, err)
    code = "structural" if isinstance(err, list) else err.code
    tag = f"repair:{code}"
    note = f"{d.note};{tag}" if d.note else tag
    return dataclasses.replace(fixed, id=d.id, provenance=Provenance.REPAIRED, note=note)


def coarse_rank(cands: Sequence[MappedDesign], obj: Objective, backend: AgentBackend) -> list[MappedDesign]:
    """Model-ordered candidate list, sanitized against the real candidate
    set; ids the model forgot keep their proxy order at the tail."""
    fallback = _heuristic.coarse_rank(cands)
    try:
        prompt = _render(
            "coarse_judge.txt",
            objective=json.dumps(_objective_dict(obj), indent=2),
            candidates=json.dumps([_candidate_dict(c) for c in cands], indent=2),
        )
        data = extract_json(LlmClient(backend).chat(prompt))
        ranking = data.get("ranking") if isinstance(data, dict) else None
        if not isinstance(ranking, list):
            raise LlmError("ranking response has no id list")
    except Exception as e:  # noqa: BLE001
        log.warning("LLM coarse judge failed (%s); falling back to proxy ranking", e)
        return fallback
    by_id = {c.design.id: c for c in cands}
    out: list[MappedDesign] = []
    for cid in ranking:
        c = by_id.pop(cid, None) if isinstance(cid, str) else None
        if c is not None:
            out.append(c)
    out.extend(c for c in fallback if c.design.id in by_id)
    return out


class LlmFineJudge:
    """Fine judge that asks the model to choose, with a heuristic shadow.

    The shadow judge absorbs every lesson, so a fallback (or a later switch
    of backends) continues from a calibrated state rather than zero.
    """

    def __init__(self, backend: AgentBackend, objective: Objective):
        self.backend = backend
        self.shadow = HeuristicFineJudge(objective)

    @property
    def lessons(self):
        return self.shadow.lessons

    def select(self, cands: Sequence[MappedDesign]) -> tuple[str, float]:
        ids = {c.design.id for c in cands}
        try:
            recent = list(self.shadow.lessons)[-6:]
            prompt = _render(
                "fine_judge.txt",
                objective=json.dumps(_objective_dict(self.shadow.objective), indent=2),
                candidates=json.dumps([_candidate_dict(c) for c in cands], indent=2),
                lessons=json.dumps(
                    [
                        {
                            "tool_choice": les.tool_choice,
                            "judge_choice": les.judge_choice,
                            "agreed": les.agreed,
                            "tool_scores": {lc.design_id: lc.tool_score for lc in les.candidates},
                        }
                        for les in recent
                    ],
                    indent=2,
                ),
            )
            data = extract_json(LlmClient(self.backend).chat(prompt))
            if not isinstance(data, dict):
                raise LlmError("selection response is not an object")
            choice, score = data.get("choice"), data.get("score")
            if choice not in ids or not isinstance(score, (int, float)) or isinstance(score, bool):
                raise LlmError("selection response malformed")
            return choice, float(score)
        except Exception as e:  # noqa: BLE001
            log.warning("LLM fine judge failed (%s); falling back to heuristic judge", e)
            return self.shadow.select(cands)

    def update(
        self,
        cands: Sequence[MappedDesign],
        reports: Sequence[EvalReport],
        tool_choice: str,
        judge_choice: str,
    ) -> Lesson:
        return self.shadow.update(cands, reports, tool_choice, judge_choice)

    def replay(self, lesson: Lesson) -> None:
        self.shadow.replay(lesson)
