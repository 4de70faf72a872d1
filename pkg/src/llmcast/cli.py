"""Command-line front end: batch simulate/forecast/sweep/validate.

All subcommands are file-in/file-out and deterministic: identical
invocations on identical inputs produce byte-identical outputs. Relative
--out paths resolve against $LIFE_OUT_DIR when it is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from llmcast.config import (
    ConfigError,
    EfficiencyProfile,
    HardwareSpec,
    ModelConfig,
    PRESET_NAMES,
    ScenarioConfig,
    parse_hardware_config,
    parse_model_config,
    preset_variant,
)
from llmcast.derived import attention, lora_merge_breakdown, lora_merge_total
from llmcast.forecast import (
    bmm_tiling_efficiency,
    decode_tps_timeline,
    efficiency_grid,
    efficiency_sweep,
    forecast_lora_update,
    forecast_tpot_tps,
    forecast_ttft,
)
from llmcast.simulator import (
    attention_spec_for,
    build_model,
    operator_distribution,
    simulate_chunked_prefill,
    simulate_decode,
    simulate_prefill,
)
from llmcast.stats import render_summary_csv, render_summary_json
from llmcast.validation import run_validation

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2


def _out_path(raw: Optional[str]) -> Optional[Path]:
    if raw is None:
        return None
    path = Path(raw)
    base = os.environ.get("LIFE_OUT_DIR")
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _write_or_print(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def emit_plotdata(series: Sequence[tuple[str, float, float]], path: Path) -> Path:
    """Write long-format plot data: one (series_label, x, y) row per point."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series_label", "x", "y"])
    for label, x, y in series:
        writer.writerow([label, x, y])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _load_config(args: argparse.Namespace) -> ModelConfig:
    if bool(args.config) == bool(args.variant):
        raise ConfigError("exactly one of --config or --variant is required")
    if args.config:
        return parse_model_config(Path(args.config).read_text(encoding="utf-8"))
    return preset_variant(args.variant)


def _load_hardware(args: argparse.Namespace) -> tuple[HardwareSpec, EfficiencyProfile]:
    if getattr(args, "hw", None):
        return parse_hardware_config(Path(args.hw).read_text(encoding="utf-8"))
    hw = HardwareSpec(
        peak_tops=args.tops,
        peak_bw=args.bw,
        dispatch_latency=args.dispatch_latency,
    )
    eff = EfficiencyProfile.uniform(ec=args.ec, em=args.em)
    return hw, eff


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a model-config JSON file")
    p.add_argument("--variant", choices=PRESET_NAMES, help="bundled model variant")


def _add_hw_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hw", help="path to a hardware/efficiency JSON file")
    p.add_argument("--tops", type=_positive_float, default=50.0, help="peak TOPs/sec")
    p.add_argument("--bw", type=_positive_float, default=240.0, help="peak bandwidth GB/s")
    p.add_argument("--ec", type=_positive_float, default=1.0, help="compute efficiency (0,1]")
    p.add_argument("--em", type=_positive_float, default=1.0, help="memory efficiency (0,1]")
    p.add_argument("--dispatch-latency", type=float, default=0.0, help="seconds per dispatch call")


def _add_out_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--out", help="output file (default: stdout); relative paths use $LIFE_OUT_DIR")


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    graph = build_model(cfg)
    if args.chunk is not None:
        scenario = ScenarioConfig("chunked_prefill", args.prompt, chunk_size=args.chunk)
        summary = simulate_chunked_prefill(graph, scenario.prompt_len, scenario.chunk_size)
    elif args.phase == "decode":
        scenario = ScenarioConfig("timeline", args.prompt, gen_len=args.gen)
        summary = simulate_decode(graph, scenario.prompt_len, scenario.gen_len)
    else:
        scenario = ScenarioConfig("prefill", args.prompt)
        summary = simulate_prefill(graph, scenario.prompt_len)
    text = render_summary_csv(summary) if args.format == "csv" else render_summary_json(summary)
    _write_or_print(text, _out_path(args.out))
    dist = operator_distribution(summary)
    shares = " ".join(f"{cls}={pct:.1f}%" for cls, pct in sorted(dist.items()) if pct >= 0.05)
    sys.stderr.write(
        f"total: {summary.total_tops:.4f} TOPs, read {summary.read_gb:.3f} GB, "
        f"KV {summary.kv_gib:.3f} GiB, {summary.dispatch_total} dispatches [{shares}]\n"
    )
    return EXIT_OK


def _cmd_forecast(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    hw, eff = _load_hardware(args)
    graph = build_model(cfg)
    prefill = simulate_prefill(graph, args.prompt)
    ttft = forecast_ttft(prefill, hw, eff)
    decode = simulate_decode(graph, args.prompt, 1)
    tpot = forecast_tpot_tps(decode.per_token[0], hw, eff)
    t_lora = forecast_lora_update(cfg, hw, eff) if cfg.lora_rank else 0.0
    rows = [
        ("t_c_seconds", ttft.t_c),
        ("t_m_seconds", ttft.t_m),
        ("tc_over_tm", ttft.tc_over_tm),
        ("ttft_seconds", ttft.ttft),
        ("tpot_seconds", tpot.tpot),
        ("tps", tpot.tps),
        ("t_lora_seconds", t_lora),
    ]
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(dict(rows), indent=2, sort_keys=True) + "\n"
    _write_or_print(text, _out_path(args.out))
    return EXIT_OK


def _parse_grid(spec: str) -> tuple[float, ...]:
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"--grid expects lo:hi:step, got {spec!r}") from None
    if lo <= 0 or hi < lo or step <= 0:
        raise ConfigError(f"--grid bounds must satisfy 0 < lo <= hi, step > 0, got {spec!r}")
    axis = []
    v = lo
    while v <= hi + 1e-9:
        axis.append(round(v, 9))
        v += step
    return tuple(axis)


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    graph = build_model(cfg)
    summary = simulate_prefill(graph, args.prompt)
    if args.eff_grid:
        # Second mode: one hardware point, efficiencies swept on both axes.
        eff_axis = _parse_grid(args.eff_grid)
        if any(not 0 < v <= 1 for v in eff_axis):
            raise ConfigError("--eff-grid values must lie in (0, 1]")
        points = efficiency_sweep(
            summary, args.tops, args.bw, eff_axis, eff_axis, dispatch_latency=args.dispatch_latency
        )
    else:
        axis = _parse_grid(args.grid)
        points = efficiency_grid(
            summary, axis, axis, ec=args.ec, em=args.em, dispatch_latency=args.dispatch_latency
        )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tops", "bw", "ec", "em", "t_c", "t_m", "tc_over_tm", "ttft"])
    for p in points:
        writer.writerow(
            [p.tops, p.bw, p.ec, p.em,
             f"{p.result.t_c:.9g}", f"{p.result.t_m:.9g}",
             f"{p.result.tc_over_tm:.9g}", f"{p.result.ttft:.9g}"]
        )
    _write_or_print(buf.getvalue(), _out_path(args.out))
    return EXIT_OK


def _cmd_timeline(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    hw, eff = _load_hardware(args)
    graph = build_model(cfg)
    summary = simulate_decode(graph, args.prompt, args.gen)
    series = decode_tps_timeline(summary, hw, eff)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["token_index", "mem_rd", "tpot", "tps"])
    for p in series.points:
        writer.writerow([p.token_index, f"{p.mem_rd_bytes:.0f}", f"{p.tpot:.9g}", f"{p.tps:.9g}"])
    _write_or_print(buf.getvalue(), _out_path(args.out))
    sys.stderr.write(
        f"first TPS {series.first_tps:.3f}, last TPS {series.last_tps:.3f}, "
        f"drop {series.drop_pct:.1f}%\n"
    )
    return EXIT_OK


def _cmd_compare_attention(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    rows = []
    for mode_label, fused in (("eager", False), ("fused", True)):
        for kvq in ("none", "int8", "int4"):
            row_vals = []
            for mech in ("MHA", "GQA", "MQA", "MLA"):
                spec = dataclasses.replace(
                    attention_spec_for(cfg, mechanism=mech), kv_qscheme=kvq, fused=fused
                )
                delta = attention(
                    spec, 1, args.prompt,
                    dtype_act=cfg.dtype_in, dtype_wts=cfg.dtype_wts,
                    grpsize=cfg.gemm_grpsize if cfg.weights_quantized else None,
                    softmax_table=cfg.actfn_table_size, softmax_algo=cfg.actfn_algo,
                    poly_degree=cfg.poly_degree, rope_table_size=cfg.rope_table_size,
                ).delta
                row_vals.append(float(Fraction(delta.read_bytes)) / 2**20)
            rows.append((f"{mode_label}-kv{kvq}", row_vals))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "mha_mib", "gqa_mib", "mqa_mib", "mla_mib"])
    for label, vals in rows:
        writer.writerow([label] + [f"{v:.2f}" for v in vals])
    _write_or_print(buf.getvalue(), _out_path(args.out))
    return EXIT_OK


def _cmd_lora(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    hw, eff = _load_hardware(args)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "projection", "merge_gops_per_layer", "total_gops", "t_lora_seconds"])
    for rank in args.ranks:
        breakdown = lora_merge_breakdown(cfg, rank)
        total = lora_merge_total(cfg, rank)
        t_c = total.opcount / (eff.ec_for("gemm") * hw.ops_per_second)
        t_m = float(Fraction(total.total_bytes)) / (eff.em_for("gemm") * hw.bytes_per_second)
        t_lora = max(t_c, t_m)
        for name, ops in breakdown.items():
            writer.writerow([rank, name, f"{ops / 1e9:.4f}", f"{total.opcount / 1e9:.4f}", f"{t_lora:.6g}"])
    _write_or_print(buf.getvalue(), _out_path(args.out))
    return EXIT_OK


def _cmd_tiling(args: argparse.Namespace) -> int:
    table = bmm_tiling_efficiency(
        args.tiles, args.head_dim, args.heads, range(args.start, args.end + 1)
    )
    series = []
    for tile, rows in table.items():
        for row in rows:
            series.append((f"tile_{tile}", row.seq, row.efficiency))
    out = _out_path(args.out)
    if out is None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["series_label", "x", "y"])
        writer.writerows(series)
        sys.stdout.write(buf.getvalue())
    else:
        emit_plotdata(series, out)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    results = run_validation(timeline_tokens=args.timeline_tokens)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if not r.passed:
            failed += 1
        sys.stdout.write(f"[{status}] {r.name}: {r.detail}\n")
    sys.stdout.write(f"{len(results) - failed}/{len(results)} checks passed\n")
    return EXIT_OK if failed == 0 else EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llmcast",
        description="Analytical LLM inference workload simulator and performance forecaster",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="count workload metrics for one scenario")
    _add_model_flags(p)
    p.add_argument("--prompt", type=_positive_int, required=True, help="prompt length in tokens")
    p.add_argument("--phase", choices=("prefill", "decode"), default="prefill")
    p.add_argument("--gen", type=_positive_int, default=1, help="tokens to decode (decode phase)")
    p.add_argument("--chunk", type=_positive_int, help="chunk size (runs chunked prefill)")
    _add_out_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("forecast", help="forecast TTFT/TPOT/TPS on a hardware point")
    _add_model_flags(p)
    p.add_argument("--prompt", type=_positive_int, required=True)
    _add_hw_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("sweep", help="TTFT grid over a TOPS x bandwidth cross product")
    _add_model_flags(p)
    p.add_argument("--prompt", type=_positive_int, required=True)
    p.add_argument("--grid", default="10:100:10", help="axis as lo:hi:step (both dimensions)")
    p.add_argument(
        "--eff-grid",
        help="sweep ec/em over lo:hi:step instead, at the fixed --tops/--bw point",
    )
    p.add_argument("--tops", type=_positive_float, default=50.0)
    p.add_argument("--bw", type=_positive_float, default=30.0)
    p.add_argument("--ec", type=_positive_float, default=1.0)
    p.add_argument("--em", type=_positive_float, default=1.0)
    p.add_argument("--dispatch-latency", type=float, default=0.0)
    _add_out_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("timeline", help="per-token decode timeline with TPS forecast")
    _add_model_flags(p)
    p.add_argument("--prompt", type=_positive_int, required=True)
    p.add_argument("--gen", type=_positive_int, required=True, help="tokens to generate")
    _add_hw_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=_cmd_timeline)

    p = sub.add_parser("compare-attention", help="per-layer attention memory by mechanism")
    _add_model_flags(p)
    p.add_argument("--prompt", type=_positive_int, required=True, help="cached context length")
    _add_out_flags(p)
    p.set_defaults(func=_cmd_compare_attention)

    p = sub.add_parser("lora", help="LoRA adapter merge cost per rank")
    _add_model_flags(p)
    p.add_argument("--ranks", type=_positive_int, nargs="+", default=[16, 32, 64, 128])
    _add_hw_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=_cmd_lora)

    p = sub.add_parser("tiling", help="BMM tiling-efficiency sawtooth data")
    p.add_argument("--tiles", type=_positive_int, nargs="+", default=[16, 32, 64])
    p.add_argument("--head-dim", type=_positive_int, default=128)
    p.add_argument("--heads", type=_positive_int, default=32)
    p.add_argument("--start", type=_positive_int, default=1)
    p.add_argument("--end", type=_positive_int, default=2048)
    p.add_argument("--out", help="output file for long-format plot data")
    p.set_defaults(func=_cmd_tiling)

    p = sub.add_parser("validate", help="run the built-in reference checks")
    p.add_argument("--timeline-tokens", type=_positive_int, default=2000)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # pragma: no cover - internal failure path
        sys.stderr.write(f"internal error: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
