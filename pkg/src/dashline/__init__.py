"""Score-based query attacks against plug-and-play output-perturbation
defenses, with Monte-Carlo verification of their analytic guarantees."""

from .attacks import (
    AttackRun,
    FixedProb,
    GeneratorSpec,
    SaSchedule,
    TacticSpec,
    bypass_random_dld,
    run_bypass,
    run_randomized,
    run_reverse,
    run_standard,
    run_tactic,
)
from .defenses import (
    AaaParams,
    DldParams,
    IntervalSet,
    LossMap,
    RandomDldParams,
    RndParams,
    aaa_linear_map,
    aaa_sine_map,
    apply_postprocess,
    build_interval_set,
    default_interval_set,
    dld_map,
    loss_bias,
    loss_high,
    loss_low,
    random_dld_map,
    rnd_preprocess,
)
from .harness import (
    BoundCheck,
    DefenseSpec,
    ExperimentConfig,
    ExperimentResult,
    VictimSpec,
    asr_curve,
    branch_proportion,
    expected_bypass_probes,
    run_matrix,
    sweep,
    theorem1_bound,
    theorem2_bound,
    verify_theorem1,
    verify_theorem2,
)
from .margin import margin_loss, margin_loss_predicted, predicted_label
from .victims import (
    BlackBoxModel,
    DefendedModel,
    RobustLandscapeModel,
    SyntheticClassifier,
    load_classifier,
    make_robust_landscape,
    make_synthetic_classifier,
    save_classifier,
    verify_global_robustness,
)

__version__ = "0.1.0"
