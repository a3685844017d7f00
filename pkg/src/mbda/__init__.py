"""Latent multi-domain SEM simulator and blanket-partition domain adaptation."""
from .adapt import (AdaptationSolution, fit_source_conditionals, fit_target, oracle_solution,
                    posterior)
from .benchmark import BenchmarkConfig, generate_benchmark, generate_model
from .graph import Y, LatentDag, blanket_partition, moralize
from .sem import TARGET, SemModel, build_dataset, exact_posterior, sample_domain

__version__ = "0.1.0"

__all__ = [
    "AdaptationSolution", "BenchmarkConfig", "LatentDag", "SemModel", "TARGET", "Y",
    "blanket_partition", "build_dataset", "exact_posterior", "fit_source_conditionals",
    "fit_target", "generate_benchmark", "generate_model", "moralize", "oracle_solution",
    "posterior", "sample_domain",
]
