"""Trace-driven planning and simulation of lifetime-aware GPU tensor
offloading to SSD and host memory."""

from .analysis import (
    CharacterizationReport,
    InactivePeriod,
    MemoryTimeline,
    characterize,
    compute_inactive_periods,
    compute_memory_timeline,
    per_kernel_active_bytes,
)
from .bandwidth import (
    BandwidthChannel,
    ChannelConfigError,
    ChannelRates,
    Reservation,
    channel_utilization,
    transfer_duration,
)
from .planner import (
    Benefit,
    CandidateWindow,
    MigrationPlan,
    PlanEntry,
    UnsatisfiableTraceError,
    candidate_benefit,
    candidate_window,
    mark_urgent,
    parse_plan,
    plan_migrations,
    select_destination,
    write_plan,
)
from .roofline import RooflinePoint, roofline_curve, saturation_bandwidth
from .simulator import (
    ConfigurationError,
    SimReport,
    SimulationError,
    simulate,
    simulate_ideal,
    simulate_layer_granularity,
    simulate_on_demand,
)
from .trace import (
    KernelRecord,
    TensorKind,
    TensorRecord,
    Trace,
    TraceParseError,
    TraceValidationError,
    ValidationReport,
    load_trace,
    make_trace,
    parse_trace,
    save_trace,
    validate_trace,
    write_trace,
)
from .tracegen import (
    TransformerGenConfig,
    gen_random_trace,
    gen_transformer_trace,
    transformer_peak_bytes,
)

__version__ = "0.1.0"
