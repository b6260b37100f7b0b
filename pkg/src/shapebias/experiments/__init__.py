from .config import (
    ConfigError,
    DatasetSection,
    ExperimentConfig,
    config_from_dict,
    config_hash,
    load_config,
    resolved_dict,
)
from .runner import (
    RunRecord,
    build_stimulus_set,
    emit_results,
    run_bias_sweep,
    run_decoding,
    run_experiment,
    run_learning_dynamics,
)
