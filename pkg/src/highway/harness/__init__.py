from .config import ConfigError, ExperimentConfig
from .presets import PRESETS
from .report import aggregate, report
from .runner import run
from .schema import HEADER, METRICS, ResultRow, SchemaError, read_csv, write_csv

__all__ = ["ConfigError", "ExperimentConfig", "PRESETS", "aggregate", "report", "run",
           "HEADER", "METRICS", "ResultRow", "SchemaError", "read_csv", "write_csv"]
