"""Command-line front end wiring the pipeline stages together.

All commands read one JSON config file; individual flags override the file
(flag > file > built-in default). Every random choice flows from the
config's seed through named streams, so reruns with identical inputs are
byte-identical. `SACLOC_LOG` sets the log level (DEBUG/INFO/WARNING/...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .conformal import calibrate, load_calibration, predict_set, save_calibration
from .dataset import (
    ApInventory,
    FingerprintSample,
    SyntheticConfig,
    generate_synthetic,
    load_fingerprints,
    load_inventory,
    save_fingerprints,
    save_inventory,
    split_train_calibration,
    synthesize_scans,
    truth_matrix,
)
from .errors import ConfigError, MissingArtifact, SaclocError
from .evalreport import (
    ErrorMapData,
    alpha_sweep,
    baseline_positions,
    coverage_by_region,
    emit_report,
    point_metrics,
)
from .graphbuild import GraphConfig, build_ap_adjacency, build_sample_graph
from .gtmodel import (
    TrainConfig,
    load_model,
    model_for_inventory,
    predict_positions,
    save_model,
    train,
    write_loss_log,
)
from .regions import assign_regions

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.01, 0.05, 0.10, 0.15, 0.20)

CHECKPOINT_NAME = "checkpoint.json"
LOSS_LOG_NAME = "loss_log.txt"
CALIBRATION_NAME = "calibration.json"


@dataclass(frozen=True)
class RunConfig:
    """One experiment: dataset paths, graph/model/train/conformal settings."""

    fingerprints: Optional[Path]
    inventory: Optional[Path]
    test: Optional[Path]
    graph: GraphConfig
    hidden: int
    n_heads: int
    train: TrainConfig
    calibration_fraction: float
    alpha: float
    k: int
    seed: int
    output_dir: Path
    synth: Optional[SyntheticConfig]


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc

    try:
        ds = raw.get("dataset", {})
        graph = raw.get("graph", {})
        model = raw.get("model", {})
        tr = raw.get("train", {})
        conf = raw.get("conformal", {})
        seed = int(raw.get("seed", 0))
        synth = None
        if "synth" in raw:
            s = raw["synth"]
            synth = SyntheticConfig(
                ap_count=int(s["ap_count"]),
                area=(float(s["area"][0]), float(s["area"][1])),
                path_loss_exponent=float(s.get("path_loss_exponent", 2.0)),
                ref_power_dbm=float(s.get("ref_power_dbm", -40.0)),
                noise_sigma_db=float(s.get("noise_sigma_db", 0.0)),
                detection_floor_dbm=float(s.get("detection_floor_dbm", -95.0)),
                sample_count=int(s.get("train_samples", 1000)),
                seed=seed,
            )
        return RunConfig(
            fingerprints=Path(ds["fingerprints"]) if "fingerprints" in ds else None,
            inventory=Path(ds["inventory"]) if "inventory" in ds else None,
            test=Path(ds["test"]) if "test" in ds else None,
            graph=GraphConfig(
                d_p=float(graph.get("d_p", 20.0)), tau=float(graph.get("tau", -75.0))),
            hidden=int(model.get("hidden", 500)),
            n_heads=int(model.get("heads", 4)),
            train=TrainConfig(
                epochs=int(tr.get("epochs", 100)),
                batch_size=int(tr.get("batch_size", 64)),
                base_lr=float(tr.get("lr", 0.001)),
                weight_decay=float(tr.get("weight_decay", 1e-4)),
                dropout=float(tr.get("dropout", 0.4)),
                seed=seed,
                workers=int(tr.get("workers", 1)),
            ),
            calibration_fraction=float(tr.get("calibration_fraction", 0.2)),
            alpha=float(conf.get("alpha", 0.1)),
            k=int(conf.get("k", 5)),
            seed=seed,
            output_dir=Path(raw.get("output_dir", "sacloc_out")),
            synth=synth,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=Path(args.out))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
        if cfg.synth is not None:
            cfg = replace(cfg, synth=replace(cfg.synth, seed=args.seed))
    if getattr(args, "alpha", None) is not None:
        cfg = replace(cfg, alpha=args.alpha)
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    tr = cfg.train
    for flag, field_name in (
        ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "base_lr"),
        ("dropout", "dropout"), ("weight_decay", "weight_decay"), ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            tr = replace(tr, **{field_name: value})
    cfg = replace(cfg, train=tr)
    if getattr(args, "hidden", None) is not None:
        cfg = replace(cfg, hidden=args.hidden)
    if getattr(args, "heads", None) is not None:
        cfg = replace(cfg, n_heads=args.heads)
    return cfg


def _require_path(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"config does not name a {what}")
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _load_train_pool(cfg: RunConfig) -> tuple[ApInventory, list[FingerprintSample]]:
    inventory = load_inventory(_require_path(cfg.inventory, "AP inventory file"))
    samples = load_fingerprints(
        _require_path(cfg.fingerprints, "fingerprint file"), inventory)
    return inventory, samples


def _split(cfg: RunConfig, samples):
    return split_train_calibration(samples, 1.0 - cfg.calibration_fraction, cfg.seed)


# -- commands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.synth is None:
        raise ConfigError("config has no `synth` section")
    fingerprints = _cfg_or_default(cfg.fingerprints, cfg.output_dir / "fingerprints.csv")
    inventory_path = _cfg_or_default(cfg.inventory, cfg.output_dir / "inventory.csv")
    test_path = _cfg_or_default(cfg.test, cfg.output_dir / "test.csv")

    inventory, train_samples = generate_synthetic(cfg.synth)
    test_samples = synthesize_scans(inventory, cfg.synth, args.test_samples, "test")

    for path in (fingerprints, inventory_path, test_path):
        path.parent.mkdir(parents=True, exist_ok=True)
    save_inventory(inventory_path, inventory)
    save_fingerprints(fingerprints, train_samples, inventory)
    save_fingerprints(test_path, test_samples, inventory)
    print(f"wrote {fingerprints} ({len(train_samples)} scans), "
          f"{test_path} ({len(test_samples)} scans), {inventory_path}")
    return 0


def _cfg_or_default(path: Optional[Path], default: Path) -> Path:
    return path if path is not None else default


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    inventory, pool = _load_train_pool(cfg)
    train_samples, _ = _split(cfg, pool)
    model = model_for_inventory(inventory, cfg.hidden, cfg.n_heads, cfg.seed)
    log.info("training on %d samples (m=%d, h=%d, E=%d, %d epochs)",
             len(train_samples), inventory.count, cfg.hidden, cfg.n_heads,
             cfg.train.epochs)
    history = train(model, train_samples, cfg.train, cfg.graph, inventory)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_model(cfg.output_dir / CHECKPOINT_NAME, model, step=len(history))
    write_loss_log(cfg.output_dir / LOSS_LOG_NAME, history)
    print(f"trained {cfg.train.epochs} epochs, final train MAE "
          f"{history[-1]['train_mae']:.3f} m -> {cfg.output_dir / CHECKPOINT_NAME}")
    return 0


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    model = load_model(_require_artifact(cfg, CHECKPOINT_NAME))
    inventory, pool = _load_train_pool(cfg)
    _, cal_samples = _split(cfg, pool)
    preds = predict_positions(model, cal_samples, inventory, cfg.graph)
    cal = calibrate(
        preds, truth_matrix(cal_samples), cfg.alpha, cfg.k, cfg.seed,
        assignment=args.assignment)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_calibration(cfg.output_dir / CALIBRATION_NAME, cal)
    radii = ", ".join("inf" if not np.isfinite(r) else f"{r:.2f}" for r in cal.radii)
    print(f"calibrated {cal.k} regions at alpha={cfg.alpha:g}: radii [{radii}] m, "
          f"global {cal.global_radius:.2f} m -> {cfg.output_dir / CALIBRATION_NAME}")
    return 0


def _require_artifact(cfg: RunConfig, name: str) -> Path:
    path = cfg.output_dir / name
    if not path.exists():
        raise MissingArtifact(f"missing {name}; run the producing command first ({path})")
    return path


def cmd_predict(cfg: RunConfig, args: argparse.Namespace) -> int:
    model = load_model(_require_artifact(cfg, CHECKPOINT_NAME))
    calibration = load_calibration(_require_artifact(cfg, CALIBRATION_NAME))
    inventory = load_inventory(_require_path(cfg.inventory, "AP inventory file"))

    if args.rssi is not None:
        values = [float(v) for v in args.rssi.split(",")]
    else:
        text = Path(args.rssi_file).read_text(encoding="utf-8")
        values = [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]
    if len(values) != inventory.count:
        raise ConfigError(
            f"RSSI vector has {len(values)} entries, inventory has {inventory.count}")

    sample = FingerprintSample(rssi=np.array(values), truth=np.zeros(2))
    ap_adj = build_ap_adjacency(inventory, cfg.graph)
    graph = build_sample_graph(sample, inventory, ap_adj, cfg.graph)
    if not graph.adjacency[graph.user_index].any():
        print("warning: no_connected_aps", file=sys.stderr)
    ps = predict_set(model, calibration, graph)
    radius = "inf" if not np.isfinite(ps.radius) else f"{ps.radius:.6f}"
    print(f"({ps.center[0]:.6f}, {ps.center[1]:.6f}, {ps.region}, {radius})")
    return 0


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    model = load_model(_require_artifact(cfg, CHECKPOINT_NAME))
    calibration = load_calibration(_require_artifact(cfg, CALIBRATION_NAME))
    inventory = load_inventory(_require_path(cfg.inventory, "AP inventory file"))
    test_samples = load_fingerprints(_require_path(cfg.test, "test file"), inventory)

    preds = predict_positions(model, test_samples, inventory, cfg.graph)
    truths = truth_matrix(test_samples)
    metrics = point_metrics(preds, truths)
    base = point_metrics(baseline_positions(test_samples, inventory), truths)
    coverage = coverage_by_region(preds, truths, calibration, args.assignment)
    regions = assign_regions(
        calibration.region_model, preds if args.assignment == "predicted" else truths)
    error_map = ErrorMapData(
        x=truths[:, 0], y=truths[:, 1],
        error_m=np.linalg.norm(preds - truths, axis=1), region=regions)
    written = emit_report(
        cfg.output_dir, metrics=metrics, coverage=coverage,
        error_map=error_map, baseline_metrics=base)
    cov = coverage.global_row.coverage
    print(f"test MAE {metrics.mae:.3f} m, median {metrics.median:.3f} m, "
          f"global coverage {100 * cov:.1f}% "
          f"(target {100 * (1 - calibration.alpha):.0f}%)")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    model = load_model(_require_artifact(cfg, CHECKPOINT_NAME))
    inventory, pool = _load_train_pool(cfg)
    _, cal_samples = _split(cfg, pool)
    test_samples = load_fingerprints(_require_path(cfg.test, "test file"), inventory)

    alphas = (
        tuple(float(a) for a in args.alphas.split(",")) if args.alphas else DEFAULT_ALPHAS
    )
    cal_preds = predict_positions(model, cal_samples, inventory, cfg.graph)
    cal_truths = truth_matrix(cal_samples)
    test_preds = predict_positions(model, test_samples, inventory, cfg.graph)
    test_truths = truth_matrix(test_samples)
    sweep = alpha_sweep(
        cal_preds, cal_truths, test_preds, test_truths, alphas, cfg.k, cfg.seed)

    # the report carries the point metrics and the configured-alpha coverage
    # as well, so sweeping after evaluate never discards report sections
    metrics = point_metrics(test_preds, test_truths)
    base = point_metrics(baseline_positions(test_samples, inventory), test_truths)
    calibration = calibrate(cal_preds, cal_truths, cfg.alpha, cfg.k, cfg.seed)
    coverage = coverage_by_region(test_preds, test_truths, calibration)
    regions = assign_regions(calibration.region_model, test_preds)
    error_map = ErrorMapData(
        x=test_truths[:, 0], y=test_truths[:, 1],
        error_m=np.linalg.norm(test_preds - test_truths, axis=1), region=regions)
    written = emit_report(
        cfg.output_dir, metrics=metrics, coverage=coverage, sweep=sweep,
        error_map=error_map, baseline_metrics=base)
    lo, hi = sweep.global_radii[-1], sweep.global_radii[0]
    print(f"global radius {lo:.2f} m at alpha={sweep.alphas[-1]:g} to "
          f"{hi:.2f} m at alpha={sweep.alphas[0]:g}")
    for path in written:
        print(f"wrote {path}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sacloc",
        description="Wi-Fi RSSI indoor localization with per-region conformal radii.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--test-samples", type=int, default=750,
                   help="size of the held-out test file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the graph-transformer regressor")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--workers", type=int, help="shard batches across N threads")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="compute per-region conformal radii")
    common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--assignment", choices=("truth", "predicted"), default="truth",
                   help="how calibration scores are grouped into regions")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="locate one RSSI scan")
    common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument(
        "--rssi",
        help="comma-separated RSSI vector, 100 = not detected "
             "(use --rssi=-60,... so leading minus signs parse)")
    group.add_argument("--rssi-file", help="file with the RSSI vector")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics + coverage report on the test file")
    common(p)
    p.add_argument("--assignment", choices=("predicted", "truth"), default="predicted",
                   help="how test samples are grouped into regions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="radii and coverage across an alpha grid")
    common(p)
    p.add_argument("--alphas", help="comma-separated strictly increasing grid")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("SACLOC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(cfg, args)
    except SaclocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
