"""Action co-occurrence priors for long-tailed interaction recognition.

Build conditional co-occurrence matrices from multi-label annotations,
select mutually exclusive anchor actions, predict actions with flat or
hierarchical heads, and distill the priors into training targets via a
projection operator.  Includes a seeded synthetic long-tailed benchmark
and ranking-based evaluation.
"""

from .anchors import (
    ActionGroups,
    ExclusivenessVector,
    build_groups,
    exclusiveness,
    load_groups,
    nes_select,
    save_groups,
)
from .cooc import CoocBank, CoocPair, build_bank, build_cooc, validate_cooc
from .corpus import (
    AnnotationCorpus,
    CandidatePair,
    ClassFrequencies,
    ImageRecord,
    LabelSpace,
    action_occurrence_sets,
    class_frequencies,
    load_corpus,
    save_corpus,
)
from .errors import (
    AcpError,
    ContractError,
    CorpusFormatError,
    CorpusValidationError,
    TrainingDivergedError,
)
from .evaluation import (
    AblationTable,
    EvalConfig,
    EvalReport,
    ablation,
    average_precision,
    evaluate,
    render_report,
    render_table,
)
from .model import (
    ActionProbs,
    ModelDims,
    ModelParams,
    UpstreamGrads,
    backward,
    compose_action_probs,
    forward,
    forward_flat,
    forward_hierarchical,
    multitask_twostream_forward,
)
from .objective import (
    HoiProbs,
    LossWeights,
    TeacherTargets,
    bce,
    joint_hoi,
    teacher_targets,
    total_loss,
)
from .projection import ProjectionWeights, postprocess, project, project_weighted
from .synth import (
    PlantedStructure,
    SynthConfig,
    generate,
    planted_vs_empirical,
    save_planted,
)
from .training import (
    Checkpoint,
    TrainConfig,
    TrainHistory,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
