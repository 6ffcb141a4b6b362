"""Distributed frame synchronization for photon-counting QKD links.

Sender side: a public +1/-1 synchronization string with periodic
autocorrelation peaks is interleaved, one bit per M random BB84 bits, into
every transmitted frame. Receiver side: clock-period recovery from raw
timestamps, noise gating, per-detector delay compensation, and an FFT
cross-correlation that locates the frame offset; accumulating the sync
slots of K consecutive frames by majority vote keeps the search working
under high channel loss. A discrete-event channel simulator with
independent sender/receiver clocks provides ground truth for all of it.
"""

from .channel import (
    ChannelParams,
    ClockModel,
    DetectionRecord,
    DetectionStream,
    PathDelays,
    load_stream_csv,
    save_stream_csv,
    scenario_presets,
    transmit,
)
from .clock_recovery import (
    GateConfig,
    PeriodEstimate,
    coarse_period_fft,
    compensate_delays,
    estimate_path_delays,
    gate_filter,
    interval_error_statistic,
    refine_period_lts,
)
from .errors import (
    EmptyGateError,
    InsufficientDataError,
    LayoutMismatchError,
    MissingDetectorError,
    NoSpectralPeakError,
    ParameterError,
    UnwrapError,
    ZeroSiftedError,
)
from .framing import (
    FrameLayout,
    FrameSchedule,
    PulseRecord,
    build_layout,
    build_schedule,
    ground_truth_bit,
    load_schedule,
    save_schedule,
)
from .harness import (
    ExperimentConfig,
    align_detections,
    compute_qber,
    run_continuous_comparison,
    run_oracle_equivalence,
    run_table1,
    run_table2,
    wilson_interval,
)
from .offset_recovery import (
    AccumulatedString,
    OffsetResult,
    ReceivedString,
    RowDecomposition,
    accumulate_frames,
    build_received_string,
    direct_offset_search,
    find_offset,
    recover_offset_highloss,
    separate_rows,
)
from .sync_string import (
    SyncString,
    SyncStringParams,
    autocorrelation,
    autocorrelation_curve,
    generate_sync_string,
    load_sync_string,
    nominal_c0,
    save_sync_string,
)

__version__ = "0.1.0"
