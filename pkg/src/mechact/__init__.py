"""mechact: agent-mechanism orchestration and fine-tuning data pipeline.

An agent solves tasks through one of five mechanisms (Reason, Plan, Memory,
Reflection, ExternalAugmentation), each expressed as explicit actions in a
shared Thought/Action/Observation format. Exploration runs every mechanism
over every task, the reward matrix is partitioned by mechanism sensitivity,
and the surviving trajectories become supervised (imao.jsonl) and preference
(maao.jsonl) fine-tuning datasets.
"""

from .calculator import calculate, evaluate_expression, format_number
from .environment import (
    DeterministicEmbedder,
    FixtureDocstore,
    MemoryStore,
    build_memory,
    lookup,
    retrieve_memory,
    search,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DataFormatError,
    DomainActionError,
    GatewayError,
    InfraError,
    MechactError,
    MemoryBuildError,
    ParseError,
    TemplateError,
    TransformError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    SpecificityReport,
    evaluate,
    evaluate_suite,
    majority_vote,
    parse_mode,
    specificity_report,
)
from .explorer import (
    DemoSet,
    EpisodeEnvironment,
    EpisodeResult,
    ExplorationRun,
    ExploreResult,
    explore_all,
    normalize_kiqa_answer,
    normalize_math_answer,
    run_episode,
    score_answer,
    uniact_transform,
)
from .forge import (
    DatasetPartition,
    KtoRecord,
    SftRecord,
    TrajectoryRef,
    apply_imao_cap,
    emit_imao,
    emit_maao,
    partition,
)
from .gateway import (
    Backend,
    ChatMessage,
    HttpBackend,
    Role,
    SamplingParams,
    ScriptedBackend,
    dialogue_from_trajectory,
    render_transcript,
)
from .grammar import (
    parse_agent_turn,
    render_action,
    render_agent_turn,
    system_prompt,
)
from .model import (
    Action,
    ActionKind,
    AgentTurn,
    Demo,
    Domain,
    EnvSource,
    EnvTurn,
    MAX_TOOL_CALLS,
    Mechanism,
    RewardMatrix,
    SCHEMA_VERSION,
    Task,
    Trajectory,
    TrajectoryFormat,
    deserialize_trajectory,
    load_tasks,
    mechanism_skeleton,
    read_trajectories,
    serialize_trajectory,
    write_trajectories,
)
from .objectives import (
    DESIRABLE,
    KtoConfig,
    KtoLossResult,
    NllResult,
    ScoredTrajectory,
    UNDESIRABLE,
    estimate_z0,
    imao_nll,
    kto_loss,
    kto_value,
    lambda_from_counts,
    sigmoid,
    suggested_weight_ratio,
)

__version__ = "0.1.0"
