"""
Prometheus metrics for pre-training runs.

These counters live in the default registry. ``pretrain`` dumps the registry
to ``<output_dir>/metrics.prom`` when ``export_metrics`` is enabled, so a
node-exporter textfile collector can pick them up.
"""

from pathlib import Path

from prometheus_client import REGISTRY, Counter, Histogram, write_to_textfile

# Training Metrics
# Track optimizer steps by mode (meta, plain) and measure their duration
TRAIN_STEPS = Counter(
    "uscl_train_steps_total",
    "Optimizer steps by training mode",
    ["mode"],  # labels: meta, plain
)

STEP_DURATION = Histogram(
    "uscl_step_duration_seconds",
    "Wall time of one training step",
    ["mode"],
    buckets=(0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0),
)

# Pair Generation Metrics
# Track generated pairs by strategy and strategy fallbacks for short videos
PAIRS_GENERATED = Counter(
    "uscl_pairs_generated_total",
    "Positive pairs generated by strategy",
    ["strategy"],  # labels: simclr, s1, s2, s3
)

PAIR_FALLBACKS = Counter(
    "uscl_pair_fallbacks_total",
    "Pairs generated with a weaker strategy than requested",
    ["from_strategy", "to_strategy"],
)


def write_metrics(path: Path) -> None:
    """Write the default registry in Prometheus text format."""
    write_to_textfile(str(path), REGISTRY)
