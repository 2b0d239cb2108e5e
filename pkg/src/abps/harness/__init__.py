"""Experiment configs, pool sampling, baselines, metrics and the CLI."""
