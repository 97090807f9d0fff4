"""Trajectory tailness analytics: differentiable rarity metrics for
multi-agent driving scenes, their fusion into a Tail Index, the prototype
memory maintained around it, and forecast evaluation with a worst-case
protocol.
"""

from .errors import (
    ConfigurationError,
    DegenerateInputWarning,
    ParseError,
    TailscopeError,
    UsageError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    ForecastSample,
    LossWeights,
    evaluate,
    min_ade,
    min_fde,
    miss_rate,
    parse_forecast_jsonl,
    rmse,
    task_loss,
    total_loss,
    worst_case_subsets,
)
from .interaction import (
    InteractiveMetrics,
    RssParams,
    compute_interactive,
    global_scene_risk,
    ittc_risk,
    rss_lateral,
    rss_longitudinal,
)
from .intrinsic import (
    IntrinsicMetrics,
    compute_intrinsic,
    geometric_complexity,
    kinematic_dynamism,
    temporal_irregularity,
)
from .memory import (
    AdaptationBatch,
    CategoryPartition,
    CognitiveSetParams,
    GateMlp,
    PrototypeMemory,
    allocation,
    augment,
    default_tail_bias,
    initialize_memory,
    inner_update,
    partition_categories,
    proto_loss,
    proto_loss_and_grad,
    similarity,
    update_prototypes,
    vigilance_adjust,
)
from .perceiver import (
    DatasetStats,
    GaussianLayer,
    PerceiverParams,
    TailIndexResult,
    bayes_forward,
    default_params,
    fusion_weights,
    kl_diag_gaussian,
    normalize_features,
    perceive,
    rank_supervision_loss,
    tail_index,
)
from .scene import (
    AgentState,
    KinematicSeries,
    Scene,
    Trajectory,
    derive_kinematics,
    dump_scenes,
    load_scenes,
    parse_scene_csv,
    scenes_to_csv,
)
from .synth import ScenarioSpec, generate

__version__ = "0.1.0"
