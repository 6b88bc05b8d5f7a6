"""Python bindings for the feature-program MaxEnt IRL core."""

import json

from ._elemental import (
    CapacityError,
    ConfigurationError,
    DegenerateWeightsError,
    Demonstrations,
    ElementalError,
    Environment,
    EvaluationError,
    FeatureProgram,
    GenerationFailed,
    ParseError,
    cli_main,
    exact_irl_gradient,
    generate_demonstrations,
    identity_program,
    keyframe_indices,
    load_demonstrations,
    make_environment,
    parse_program,
    render_superimposed_png,
    reward_correlation,
    task_success_metric,
)
from . import _elemental


def feature_expectation(demos, program):
    return json.loads(_elemental.feature_expectation_json(demos, program))


def run_irl(env, demos, program, **kwargs):
    """Approximate MaxEnt IRL. Returns a dict with reward, iterations, policy."""
    return json.loads(_elemental.run_irl_json(env, demos, program, **kwargs))


def aggregate(values):
    return json.loads(_elemental.aggregate_json(list(values)))


def run_experiment(config, base_dir=""):
    """Runs the full loop from a config dict (or JSON text)."""
    text = config if isinstance(config, str) else json.dumps(config)
    return json.loads(_elemental.run_experiment_json(text, base_dir))


__all__ = [name for name in dir() if not name.startswith("_") and name != "json"]
