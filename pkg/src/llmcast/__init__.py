"""Analytical simulator and performance forecaster for LLM inference workloads.

Counts compute operations, memory traffic, KV-cache traffic and dispatch
calls per operator over prefill/decode timelines, and forecasts TTFT, TPOT
and TPS for any hardware described by peak TOPS, bandwidth and efficiency
factors. No tensors are ever materialized; everything is closed-form.
"""

from llmcast.config import (
    ConfigError,
    DataTypeSpec,
    EfficiencyProfile,
    HardwareSpec,
    ModelConfig,
    ScenarioConfig,
    parse_model_config,
    preset_variant,
    PRESET_NAMES,
)
from llmcast.ops import StatsDelta
from llmcast.stats import StatsDB, StatsRecord, RunSummary
from llmcast.simulator import (
    build_model,
    simulate_prefill,
    simulate_chunked_prefill,
    simulate_decode,
    operator_distribution,
)
from llmcast.forecast import (
    ForecastResult,
    GridPoint,
    time_compute,
    time_memory,
    forecast_ttft,
    forecast_tpot_tps,
    forecast_lora_update,
    efficiency_grid,
    bmm_tiling_efficiency,
    decode_tps_timeline,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataTypeSpec",
    "EfficiencyProfile",
    "HardwareSpec",
    "ModelConfig",
    "ScenarioConfig",
    "parse_model_config",
    "preset_variant",
    "PRESET_NAMES",
    "StatsDelta",
    "StatsDB",
    "StatsRecord",
    "RunSummary",
    "build_model",
    "simulate_prefill",
    "simulate_chunked_prefill",
    "simulate_decode",
    "operator_distribution",
    "ForecastResult",
    "GridPoint",
    "time_compute",
    "time_memory",
    "forecast_ttft",
    "forecast_tpot_tps",
    "forecast_lora_update",
    "efficiency_grid",
    "bmm_tiling_efficiency",
    "decode_tps_timeline",
]
