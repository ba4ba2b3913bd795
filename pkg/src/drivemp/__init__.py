"""drivemp: learning and generalizing driving motion primitives.

Two-level structure: the upper level segments recorded paths at
steering-direction changes and clusters their features with a Gaussian
mixture; the lower level fits one mixture of windowed (path, steering)
vectors per path type and generalizes it with Gaussian mixture regression
to predict steering-wheel-angle sequences with confidence bands.
"""

from .trace import DT, DrivingTrace, MpWindowConfig, PathPoint, course_deviation, validate_trace
from .ingest import (
    ExclusionList,
    apply_exclusions,
    load_csv,
    resample_uniform,
    smooth_moving_average,
)
from .mixture import (
    FitConfig,
    GaussianMixture,
    bic,
    density,
    em_fit,
    kmeans_init,
    log_density,
    responsibility,
    select_k,
)
from .gmr import BlockPartition, ConditionalEstimate, condition_component, mixing_weights, partition, regress
from .paths import (
    PathFeatures,
    PathModel,
    PathSegment,
    PathTypeTriple,
    build_triples,
    extract_features,
    fit_path_model,
    label_segments,
    segment_trace,
)
from .motion import (
    ModelBundle,
    MotionPrimitiveModel,
    TrainingConfig,
    build_training_vectors,
    load_bundle,
    regroup,
    save_bundle,
    train_mp_models,
)
from .predict import PredictionQuery, PredictionResult, predict_steering, resolve_type
from .synth import ScenarioConfig, synth_corpus, synth_event_trace
from .evaluate import EvalRow, SweepConfig, evaluate, split_traces, sweep

__version__ = "0.1.0"
