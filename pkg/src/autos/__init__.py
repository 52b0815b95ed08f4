"""Multi-source domain adaptation with density-driven source selection.

Per-domain models are trained from a shared start, scored against the
unlabeled target by how densely confident target samples gather around
their class prototypes, and averaged with those scores; domains that fall
below a rising threshold are dropped for good. The averaged model is then
adapted to the target under a frozen teacher whose class prompts are tuned.
"""
from .data import LabeledDomain, SyntheticSpec, UnlabeledDomain, generate_synthetic
from .errors import AutoSError, ConfigError, DataError, NumericError, ShapeError
from .federate import aggregate, renormalize
from .nn import Hyperparams, Model, init_model
from .pipeline import MODES, RunConfig, RunReport, emit_report, evaluate, load_config, run_pipeline
from .selection import select_domains
from .suite import SUITE

__all__ = [
    "AutoSError", "ConfigError", "DataError", "Hyperparams", "LabeledDomain", "MODES", "Model", "NumericError",
    "RunConfig", "RunReport", "SUITE", "ShapeError", "SyntheticSpec", "UnlabeledDomain", "aggregate", "emit_report",
    "evaluate", "generate_synthetic", "init_model", "load_config", "renormalize", "run_pipeline", "select_domains",
]
__version__ = "0.1.0"
