"""Configuration, experiment drivers, CSV reports and the CLI."""

from socialfl.harness.config import AttackGrid, ConfigError, ExperimentConfig, config_from_dict, load_config
from socialfl.harness.experiments import (
    run_coalition_experiment,
    run_consensus_experiment,
    run_full_pipeline,
    run_provenance_experiment,
)
from socialfl.harness.report import SCHEMAS, SchemaError, read_csv, write_csv
