"""Closed-loop CGRA hardware/software co-design.

The pipeline drafts candidate designs (grid, functional-unit mix, config
memory, interconnect, plus loop unroll/vectorize factors), validates them
by actually mapping the transformed kernel under modulo scheduling
(repairing designs that fail), screens survivors with a cheap proxy, and
lets an adaptive-confidence controller decide when the expensive evaluator
must confirm the judge's pick. Every run leaves a replayable JSONL event
log, a metrics summary, and the best design found.
"""

__version__ = "0.1.0"

from .arch import (
    DesignPoint,
    FabricSpec,
    FuKind,
    Provenance,
    SwParams,
    Topology,
    parse_design,
    serialize_design,
    validate_design,
)
from .costs import (
    BIG,
    EvalReport,
    Objective,
    ObjectiveMode,
    load_cost_coeffs,
    tool_evaluate,
    tool_select,
)
from .kernel import (
    BUILTIN_KERNELS,
    KernelGraph,
    apply_sw_params,
    load_kernel,
    summarize,
    unroll,
    vectorize,
)
from .mapper import (
    MapBudget,
    MapError,
    MappedDesign,
    MappingResult,
    check_mapping,
    map_kernel,
    min_ii_bounds,
    speedup,
)
from .orchestrate import RunConfig, RunResult, run
from .selection import SelectionConfig, SelectionState, select_step

__all__ = [
    "__version__",
    "BIG",
    "BUILTIN_KERNELS",
    "DesignPoint",
    "EvalReport",
    "FabricSpec",
    "FuKind",
    "KernelGraph",
    "MapBudget",
    "MapError",
    "MappedDesign",
    "MappingResult",
    "Objective",
    "ObjectiveMode",
    "Provenance",
    "RunConfig",
    "RunResult",
    "SelectionConfig",
    "SelectionState",
    "SwParams",
    "Topology",
    "apply_sw_params",
    "check_mapping",
    "load_cost_coeffs",
    "load_kernel",
    "map_kernel",
    "min_ii_bounds",
    "parse_design",
    "run",
    "select_step",
    "serialize_design",
    "speedup",
    "summarize",
    "tool_evaluate",
    "tool_select",
    "unroll",
    "validate_design",
    "vectorize",
]
