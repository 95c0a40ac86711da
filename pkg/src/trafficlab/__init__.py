"""trafficlab: traffic-model baselines, evaluation, GA calibration and an
iterative model-improvement loop driven by a pluggable chat backend."""

from trafficlab.errors import (
    CandidateRuntimeError,
    CandidateValidationError,
    ConfigurationError,
    DataIntegrityError,
    DslError,
    ParseError,
    SchemaError,
    SimulationError,
    TrafficlabError,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateRuntimeError",
    "CandidateValidationError",
    "ConfigurationError",
    "DataIntegrityError",
    "DslError",
    "ParseError",
    "SchemaError",
    "SimulationError",
    "TrafficlabError",
    "__version__",
]
