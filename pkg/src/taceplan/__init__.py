"""taceplan: desk-scale TACE treatment simulation and protocol search."""

from .actions import (
    ActionBase,
    ActionCombo,
    ActionUnit,
    ClinicalRule,
    ExtractedAction,
    ObservationSummary,
    Vocabulary,
    check_rules,
    default_vocabulary,
    infer_attenuation_level,
    parse_report,
    propose_action_base,
    render_report,
)
from .cohort import (
    BenchmarkConfig,
    Cohort,
    MetricsReport,
    SyntheticPatient,
    benchmark,
    generate_cohort,
    load_cohort,
    save_cohort,
    set_metrics,
)
from .dynamics import (
    AttenuationParams,
    ComboEmbedding,
    EfficacyTable,
    SimulatedState,
    attenuate,
    combo_contrastive_loss,
    combo_efficacy,
    encode_combo,
    simulate,
)
from .explorer import ExplorationConfig, Plan, exhaustive_oracle, explore
from .segmenter import SegmenterConfig, dice, segment_post
from .survival import (
    FEATURE_NAMES,
    CoxModel,
    FeatureVector,
    StepFunction,
    SurvivalRecord,
    concordance_index,
    extract_features,
    fit_cox,
    kaplan_meier,
    logrank,
    nelson_aalen,
    risk_score,
    true_risk,
)
from .voxel import (
    Mask3,
    StructuringElement,
    Volume3,
    connected_components,
    crop_patch,
    dilate,
    erode,
    gaussian_blur,
    load_mask,
    load_volume,
    resample,
    save_mask,
    save_volume,
    window_normalize,
)

__version__ = "0.1.0"
