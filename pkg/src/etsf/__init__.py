"""Meta-learning engine and benchmark harness for early time series
forecasting: shared-encoder multi-head forecasting models, first-order
meta-training across datasets with adversarial target augmentation, and a
leave-one-out evaluation protocol scored by scaled errors."""

from .augment import AdversarialConfig, adversarial_loss, fgsm_perturb
from .baselines import mean_forecast, naive_forecast
from .bench import (
    BenchmarkManifest,
    EtsfTask,
    EvalReport,
    SyntheticSpec,
    compute_mase,
    gen_synthetic,
    leave_one_out,
    load_manifest,
    make_windows,
    split_validation,
    truncate_for_etsf,
)
from .model import ModelConfig, ModelParams, backward, forward, init_params, load_params, save_params
from .training import (
    STRATEGIES,
    Sample,
    TaskData,
    TrainConfig,
    TrainState,
    adapt_target,
    forecast_target,
    inner_epoch,
    meta_update,
    train,
)
from .tsf import (
    Dataset,
    DatasetMeta,
    Frequency,
    SeriesRecord,
    TsfFormatError,
    impute_missing,
    load_registry,
    load_tsf,
    parse_tsf,
    serialize_tsf,
)

__version__ = "0.1.0"
