"""Mobility-aware day-ahead electrical load forecasting.

Library layout:
    dataset     CSV ingestion, hourly alignment, synthetic fixtures
    features    calendar one-hots, min-max normalization, sample building
    neuralnet   dense network, hand-written gradients, checkpoints
    training    MAPE-loss training, multi-task co-training, fine-tuning
    evaluation  four-variant experiment protocol and report writers
    scenario    Monte Carlo mobility-scenario load projection
    plots       matplotlib figure rendering for the report path
    cli         `mobiload` command-line entry point
"""

__version__ = "0.1.0"
