"""Experiment harness: configs, multi-trial runs, statistics and persistence."""
from .config import ExperimentConfig, build, config_from_dict, dump_config, load_config, parse_config, validate
from .runner import CSV_HEADER, SCHEMA_VERSION, SummaryRow, read_csv, report, run_experiment, run_trials
from .stats import RateFit, fit_loglog, fit_rate, nearest_rank, quantile_report
