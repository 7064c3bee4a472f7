"""Peak GPU memory estimation and parallel-strategy planning for LLM fine-tuning."""

__version__ = "0.1.0"

from .estimator import (  # noqa: E402
    ParamBytes,
    ProfileInconsistencyError,
    align_to_page,
    estimate_lm_head,
    estimate_optimizer_states,
    estimate_outputs,
    estimate_params,
    estimate_peak,
    estimate_peak_adp,
    estimate_peak_hybrid,
    estimate_peak_single,
    estimate_peak_tp,
    estimate_tp_backward_buffer,
)
from .ingest import (  # noqa: E402
    ArchitectureSpec,
    ManifestError,
    choose_chunk_size,
    derive_profile,
    load_fixture,
    load_manifest,
    save_manifest,
)
from .planner import (  # noqa: E402
    CensoredSearchError,
    DecisionReport,
    StrategyResult,
    decide,
    max_feasible_batch,
    score_strategy,
    sweep,
)
from .profiles import (  # noqa: E402
    ChunkConfig,
    HardwareProfile,
    MemoryBreakdown,
    MemplanError,
    ModelProfile,
    OperatorKind,
    OperatorRecord,
    PrecisionSpec,
    RunConfig,
    StrategyKind,
    StrategySpec,
    ValidationError,
)
