"""Reference-based multiple imputation for longitudinal trial endpoints.

Jump-to-reference and MAR imputation for multivariate normal repeated
measures, Rubin's-rules pooling, frequentist variance estimators (bootstrap
then impute, simplified-case closed forms, congenial Bayes), and a
Monte-Carlo simulation harness.
"""

from .analyze import (
    CompleteDataEstimate,
    PooledEstimate,
    analyze_ancova,
    analyze_diff_means,
    pooled_to_json,
    rubin_pool,
)
from .data import (
    PatientRecord,
    TrialDataset,
    load_csv,
    resample,
    split_by_arm,
    write_csv,
)
from .errors import (
    DegenerateVariance,
    EmptyArm,
    InsufficientData,
    MalformedRow,
    MissingBaseline,
    NoObservedReference,
    NonMonotoneMissingness,
    NotPositiveDefinite,
    RefmiError,
    SingularDesign,
    TooFewImputations,
)
from .fit import ArmModel, SequentialFactors, fit_mle, posterior_draw
from .fvar import (
    BootMiEstimate,
    BootMiGrid,
    SimplifiedStats,
    boot_then_impute,
    congenial_bayes_simplified,
    simplified_mle_variance,
    simplified_obs_variance,
    simplified_point,
    simplified_stats,
    simplified_var_active,
    vonhippel_pool,
)
from .impute import J2RJoint, Strategy, build_j2r_joint, impute_dataset, impute_patient
from .mvn import ConditionalGaussian, cholesky, condition, sample
from .sim import (
    DropoutSpec,
    ScenarioConfig,
    SimReport,
    generate_trial,
    load_scenario,
    run_scenario,
)

__version__ = "0.1.0"
