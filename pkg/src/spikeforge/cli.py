"""Batch front-end: convert, simulate, diagnose, sweep.

Outputs are machine-readable (JSON report, CSV tables) and byte-deterministic
for a fixed configuration; every file embeds the configuration and tool
version as comment/metadata for provenance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from . import model as m
from .bundle import load_bundle, load_calibration, save_bundle
from .convert import POOLING_MODES, convert_pipeline
from .diagnostics import (
    DiagnosticsReport,
    build_report,
    combine_reports,
    layer_table,
    reference_activations,
)
from .errors import SpikeForgeError
from .sim import simulate_batch

_POOLING_FLAGS = {"avg": "average", "max-rate": "max_rate", "lip": "lip"}
_CHUNK = 64


@dataclass
class RunConfig:
    model: str
    calib: str
    p: float = 99.9
    gamma: int = 1
    horizon: int = 64
    pooling: str = "lip"
    v_th: float = 1.0
    out: str = "out"
    seed: int = 0
    eval: str | None = None
    workers: int = 1

    def validate(self):
        if not 0.0 < self.p <= 100.0:
            raise SpikeForgeError(f"--p must lie in (0, 100], got {self.p}")
        if self.gamma < 1:
            raise SpikeForgeError(f"--gamma must be >= 1, got {self.gamma}")
        if self.horizon < 1:
            raise SpikeForgeError(f"--T must be >= 1, got {self.horizon}")
        if self.pooling not in POOLING_MODES:
            raise SpikeForgeError(f"--pooling must be one of {POOLING_MODES}")
        if self.v_th <= 0:
            raise SpikeForgeError(f"--vth must be > 0, got {self.v_th}")
        if self.workers < 1:
            raise SpikeForgeError(f"--workers must be >= 1, got {self.workers}")


def _provenance(config: dict) -> list[str]:
    blob = json.dumps(config, sort_keys=True)
    return [f"# spikeforge {__version__}", f"# config: {blob}"]


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    # out is self-referential and workers only parallelizes (fixed-size
    # chunks keep results identical); neither may break byte-identity of
    # outputs for one logical configuration
    d.pop("out", None)
    d.pop("workers", None)
    return d


def _write_csv(path: str, header: list[str], rows: list[list], config: dict):
    buf = io.StringIO()
    for line in _provenance(config):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _eval_chunk(args):
    net, normalized, inputs, horizon, e = args
    trace = simulate_batch(net, inputs, horizon, record_steps=False)
    ref = reference_activations(normalized, inputs, net.input_scale)
    report = build_report(normalized, trace, ref, e)
    preds = np.argmax(trace.output_sum, axis=1)
    return preds, report


def evaluate(net, normalized, inputs: np.ndarray, horizon: int,
             workers: int = 1) -> tuple[np.ndarray, DiagnosticsReport]:
    """Simulate a sample batch in fixed-size chunks (optionally in a worker
    pool) and return per-sample predictions plus the merged report."""
    jobs = [(net, normalized, inputs[s:s + _CHUNK], horizon, None)
            for s in range(0, inputs.shape[0], _CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_chunk, jobs))
    else:
        results = [_eval_chunk(job) for job in jobs]
    preds = np.concatenate([r[0] for r in results])
    report = combine_reports([r[1] for r in results])
    return preds, report


def _load_pipeline(cfg: RunConfig):
    model = load_bundle(cfg.model)
    calib = load_calibration(cfg.calib, expected_shape=model.input_shape)
    net, normalized, stats = convert_pipeline(
        model, calib, p=cfg.p, gamma=cfg.gamma, pooling=cfg.pooling,
        v_th=cfg.v_th, default_horizon=cfg.horizon)
    return model, calib, net, normalized, stats


def _eval_inputs(cfg: RunConfig, model, calib):
    if cfg.eval:
        ev = load_calibration(cfg.eval, expected_shape=model.input_shape)
        return ev.inputs, ev.labels
    return calib.inputs, calib.labels


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    model, calib, net, normalized, stats = _load_pipeline(cfg)
    inputs, labels = _eval_inputs(cfg, model, calib)
    preds, report = evaluate(net, normalized, inputs, cfg.horizon, cfg.workers)

    os.makedirs(cfg.out, exist_ok=True)
    save_bundle(normalized, os.path.join(cfg.out, "converted"))
    config = _config_dict(cfg)

    accuracy = None
    rows = []
    for i, pred in enumerate(preds):
        if labels is not None:
            rows.append([i, int(pred), labels[i], int(int(pred) == labels[i])])
        else:
            rows.append([i, int(pred), "", ""])
    if labels is not None:
        accuracy = float(np.mean(preds == np.asarray(labels)))
    _write_csv(os.path.join(cfg.out, "results.csv"),
               ["sample", "prediction", "label", "correct"], rows, config)

    table = layer_table(report)
    header = ["layer", "kind", "rate_mean", "rate_max", "rate_min", "v_mean",
              "v_max", "r2_fraction", "sin", "rate_err", "pool_err_mean",
              "pool_err_max", "correct_ratio"]
    _write_csv(os.path.join(cfg.out, "layers.csv"), header,
               [[_fmt(row.get(col, "")) for col in header] for row in table],
               config)

    payload = {
        "tool": "spikeforge",
        "version": __version__,
        "config": config,
        "accuracy": accuracy,
        "activation_scales": {str(k): v for k, v in stats.lambda_per_layer.items()},
        "input_scale": stats.lambda_input,
        "report": report.to_dict(),
    }
    with open(os.path.join(cfg.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if accuracy is not None:
        print(f"accuracy {accuracy:.4f} over {len(preds)} samples")
    print(f"report written to {cfg.out}")
    return 0


def _pool_summary(report: DiagnosticsReport) -> tuple[float, float]:
    if not report.pools:
        return 0.0, 1.0
    errs = [p["mean_abs_err"] for p in report.pools.values()]
    ratios = [p["correct_ratio"] for p in report.pools.values()]
    return float(np.mean(errs)), float(np.mean(ratios))


def cmd_sweep(cfg: RunConfig, horizons: list[int], gammas: list[int],
              poolings: list[str], ps: list[float]) -> int:
    if not (horizons and gammas and poolings and ps):
        raise SpikeForgeError("sweep axes must be non-empty")
    model = load_bundle(cfg.model)
    calib = load_calibration(cfg.calib, expected_shape=model.input_shape)
    inputs, labels = _eval_inputs(cfg, model, calib)

    rows = []
    for p in ps:
        for pooling in poolings:
            for gamma in gammas:
                point = RunConfig(model=cfg.model, calib=cfg.calib, p=p,
                                  gamma=gamma, horizon=max(horizons),
                                  pooling=pooling, v_th=cfg.v_th, out=cfg.out,
                                  seed=cfg.seed, eval=cfg.eval,
                                  workers=cfg.workers)
                point.validate()
                net, normalized, _ = convert_pipeline(
                    model, calib, p=p, gamma=gamma, pooling=pooling, v_th=cfg.v_th)
                for horizon in horizons:
                    preds, report = evaluate(net, normalized, inputs, horizon,
                                             cfg.workers)
                    accuracy = (float(np.mean(preds == np.asarray(labels)))
                                if labels is not None else "")
                    pool_err, correct = _pool_summary(report)
                    rows.append([horizon, gamma, pooling, _fmt(p),
                                 _fmt(accuracy) if accuracy != "" else "",
                                 _fmt(report.rate_err_mean),
                                 report.sin_total, _fmt(pool_err),
                                 _fmt(correct),
                                 _fmt(report.energy["ratio"])])
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "results.csv"),
               ["T", "gamma", "pooling", "p", "accuracy", "mean_rate_err",
                "sin_total", "pool_err_mean", "correct_ratio", "energy_ratio"],
               rows, _config_dict(cfg))
    print(f"{len(rows)} sweep rows written to {cfg.out}/results.csv")
    return 0


def cmd_convert(cfg: RunConfig) -> int:
    cfg.validate()
    _, _, net, normalized, stats = _load_pipeline(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    save_bundle(normalized, os.path.join(cfg.out, "converted"))
    payload = {
        "tool": "spikeforge",
        "version": __version__,
        "config": _config_dict(cfg),
        "p": stats.p,
        "input_scale": stats.lambda_input,
        "activation_scales": {str(k): v for k, v in stats.lambda_per_layer.items()},
        "gamma": net.gamma_cap,
        "pooling": net.pooling_mode,
    }
    with open(os.path.join(cfg.out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"converted bundle written to {cfg.out}/converted")
    return 0


def cmd_validate(model_path: str) -> int:
    model = load_bundle(model_path)
    shapes = m.validate_shapes(model)
    for i, (layer, shape) in enumerate(zip(model.layers, shapes)):
        print(f"layer {i:2d} {layer.kind:12s} -> {list(shape)}")
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        save_bundle(model, tmp)
        reloaded = load_bundle(tmp)
        for a, b in zip(model.layers, reloaded.layers):
            for attr in ("weight", "bias", "gamma", "beta", "running_mean", "running_var"):
                va, vb = getattr(a, attr), getattr(b, attr)
                if va is not None and not np.array_equal(va, vb):
                    raise SpikeForgeError(f"round-trip mismatch in {a.kind}.{attr}")
    print("bundle valid; round-trip exact")
    return 0


def _add_common(sp):
    sp.add_argument("--model", required=True, help="bundle directory (model.json + weights.bin)")
    sp.add_argument("--calib", required=True, help="calibration descriptor or directory")
    sp.add_argument("--eval", default=None, help="evaluation set (defaults to calibration)")
    sp.add_argument("--vth", type=float, default=1.0, help="firing threshold")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="seed recorded for provenance")
    sp.add_argument("--workers", type=int,
                    default=int(os.environ.get("SPIKEFORGE_WORKERS", "1")),
                    help="evaluation worker processes (env SPIKEFORGE_WORKERS)")


def _pooling(value: str) -> str:
    if value not in _POOLING_FLAGS:
        raise argparse.ArgumentTypeError(
            f"pooling must be one of {sorted(_POOLING_FLAGS)}")
    return _POOLING_FLAGS[value]


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def _float_list(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v.strip()]


def _pooling_list(value: str) -> list[str]:
    return [_pooling(v.strip()) for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikeforge",
        description="ANN-to-SNN conversion, simulation, and diagnostics")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="convert, simulate, and report")
    _add_common(run)
    run.add_argument("--p", type=float, default=99.9, help="normalization percentile")
    run.add_argument("--gamma", type=int, default=1, help="per-step spike cap")
    run.add_argument("--T", type=int, default=64, dest="horizon", help="simulation steps")
    run.add_argument("--pooling", type=_pooling, default="lip",
                     help="pooling mode: avg | max-rate | lip")

    sweep = sub.add_parser("sweep", help="evaluate a grid of configurations")
    _add_common(sweep)
    sweep.add_argument("--p", type=_float_list, default=[99.9],
                       help="comma-separated percentiles")
    sweep.add_argument("--gamma", type=_int_list, default=[1],
                       help="comma-separated spike caps")
    sweep.add_argument("--T", type=_int_list, default=[64], dest="horizon",
                       help="comma-separated horizons")
    sweep.add_argument("--pooling", type=_pooling_list, default=["lip"],
                       help="comma-separated pooling modes")

    conv = sub.add_parser("convert", help="conversion only, write the bundle")
    _add_common(conv)
    conv.add_argument("--p", type=float, default=99.9)
    conv.add_argument("--gamma", type=int, default=1)
    conv.add_argument("--T", type=int, default=64, dest="horizon")
    conv.add_argument("--pooling", type=_pooling, default="lip")

    val = sub.add_parser("validate", help="shape and round-trip checks")
    val.add_argument("--model", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.model)
        if args.command == "sweep":
            cfg = RunConfig(model=args.model, calib=args.calib, eval=args.eval,
                            v_th=args.vth, out=args.out, seed=args.seed,
                            workers=args.workers)
            return cmd_sweep(cfg, args.horizon, args.gamma, args.pooling, args.p)
        cfg = RunConfig(model=args.model, calib=args.calib, p=args.p,
                        gamma=args.gamma, horizon=args.horizon,
                        pooling=args.pooling, v_th=args.vth, out=args.out,
                        seed=args.seed, eval=args.eval, workers=args.workers)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_convert(cfg)
    except (SpikeForgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
