"""Constants for adadf."""

LOGGER_NAME = "adadf"
"""Root name of the structlog logger."""

CONFIG_DIR_ENV = "ADADF_CONFIG_DIR"
"""Environment variable naming the directory for relative config paths."""

CHECKPOINT_VERSION = 1
"""Format version written into every checkpoint."""

LOG_EPSILON = 1e-12
"""Lower clamp applied to every probability before taking its logarithm."""

PROB_TOLERANCE = 1e-6
"""Tolerance on the sum of a probability vector."""

CSV_DIST_TOLERANCE = 1e-4
"""Tolerance on distribution columns of an input CSV before renormalizing."""

SIGMOID_CLAMP = 30.0
"""Inputs to the sigmoid are clamped to this magnitude.

At 30 the output is still strictly inside (0, 1) in double precision.
"""

ADAM_BETA1 = 0.9
"""Exponential decay rate of the first moment estimate."""

ADAM_BETA2 = 0.999
"""Exponential decay rate of the second moment estimate."""

ADAM_EPSILON = 1e-8
"""Denominator guard of the Adam update."""

TRAIN_FRACTION = 0.8
"""Fraction of samples placed in the training split."""

COUNT_GUARD = 1e-9
"""Added to ``rate * n`` before flooring to absorb representation error.

Used for the number of flipped labels and the size of the high attention
group.
"""

# Independent generator streams derived from one seed.  Distinct values
# keep the model initialization, dataset and batch order uncorrelated.

STREAM_MODEL = 1
STREAM_DATA = 2
STREAM_SPLIT = 3
STREAM_NOISE = 4
STREAM_BATCHES = 5

# Names of the files making up a run directory.

CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.jsonl"
STEPS_FILE = "steps.jsonl"
TABLES_FILE = "tables.jsonl"
TRACE_FILE = "trace.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
SUMMARY_FILE = "summary.json"
