"""specsim: discrete-event simulator and latency calculator for batch-parallel
speculative decoding.

The engine (specsim.engine) plays out the two-batch draft/verify alternation
step by step, with paged KV accounting, batch membership policies, fallback to
plain speculative decoding, and per-request acceptance streams.  The analytic
side (specsim.analytic) gives closed forms for the optimal serial and
batch-parallel latencies under an exponential acceptance frontier, including a
hand-rolled real Lambert W.  The CLI (specsim.cli) wires both behind
`specsim simulate | sweep | analyze | verify-theory`.
"""

from .acceptance_model import (
    AcceptanceModel,
    acceptance_stream,
    accepted_count,
    expected_accepted,
)
from .analytic import (
    FrontierParams,
    PsdOptimum,
    SdOptimum,
    frontier,
    lambert_w,
    psd_time,
    sd_optimal,
    sd_psd_ratio,
    sd_time_brute,
)
from .batch_manager import BatchManager
from .engine import EngineState, FinishRecord, KvStepRecord, PendingDraft, run, step_once
from .errors import (
    CapacityError,
    ConfigError,
    KVError,
    NumericError,
    ProtocolError,
    SpecsimError,
    WorkloadError,
)
from .kv_manager import AllocationContext, KVBlockTable, blocks_needed
from .metrics import MetricsReport, compute_metrics, percentile_nearest_rank
from .request_model import (
    LatencyModel,
    Request,
    RequestState,
    SimConfig,
    StepRecord,
    validate_config,
)
from .workload import (
    LengthSpec,
    Preemption,
    WorkloadSpec,
    generate_requests,
    parse_preemptions,
    parse_trace,
)

__version__ = "0.1.0"

__all__ = [
    "AcceptanceModel",
    "AllocationContext",
    "BatchManager",
    "CapacityError",
    "ConfigError",
    "EngineState",
    "FinishRecord",
    "FrontierParams",
    "KVBlockTable",
    "KVError",
    "KvStepRecord",
    "LatencyModel",
    "LengthSpec",
    "MetricsReport",
    "NumericError",
    "PendingDraft",
    "Preemption",
    "ProtocolError",
    "PsdOptimum",
    "Request",
    "RequestState",
    "SdOptimum",
    "SimConfig",
    "SpecsimError",
    "StepRecord",
    "WorkloadError",
    "WorkloadSpec",
    "acceptance_stream",
    "accepted_count",
    "blocks_needed",
    "compute_metrics",
    "expected_accepted",
    "frontier",
    "generate_requests",
    "lambert_w",
    "parse_preemptions",
    "parse_trace",
    "percentile_nearest_rank",
    "psd_time",
    "run",
    "sd_optimal",
    "sd_psd_ratio",
    "sd_time_brute",
    "step_once",
    "validate_config",
    "__version__",
]
