"""Command-line front end.

Subcommands share one output directory layout::

    OUT/scene.json
    OUT/rek/spectrum_col000.csv ...   rek/classification.csv
    OUT/oracle/path_loss.csv          oracle/paths.csv  oracle/c_diag_search.csv
    OUT/model/model.npz               model/split.json  model/train_log.csv
    OUT/predict/pred_col000.csv ...
    OUT/eval/metrics.json             eval/selection_accuracy.csv  eval/summary_stats.csv
    OUT/eval/cdf_true.csv             eval/cdf_pred.csv  eval/timing.json
    OUT/manifest.json                 (run only)

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rekit._io import atomic_write_text, read_csv, substream, write_csv
from rekit.evaluation import (
    accuracy_report,
    summary_stats,
    write_accuracy_csv,
    write_cdf_csv,
    write_stats_csv,
)
from rekit.geometry import ScattererClass
from rekit.oracle import label_scene, oracle_classes, path_loss, rank_scatterers_by_power, write_label_csvs
from rekit.predictor import (
    TrainConfig,
    load_model,
    nrmse,
    predict,
    save_model,
    to_tensor,
    train,
    write_training_log,
)
from rekit.rek import (
    KnowledgeCoefficients,
    REKSpectrum,
    column_trajectory,
    construct_rek,
    grid_search_c_diag,
    rek_spectrum,
    write_spectrum_csv,
)
from rekit.scene import (
    CANONICAL_SCENE_PATH,
    BooleanModelParams,
    SceneError,
    generate_scene,
    grid_receivers,
    load_scene,
    save_scene,
)

log = logging.getLogger("rekit")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
# files whose content depends on wall-clock time; listed in the manifest without a hash
VOLATILE = {"model/train_log.csv", "eval/timing.json"}
REPORT_RX_STRIDE = 10


class ValidationError(Exception):
    pass


@dataclass
class RunConfig:
    scene: str | None = None
    generate: dict | None = None
    coefficients: dict[str, float] = field(default_factory=dict)
    trajectory: str = "all"
    train: dict = field(default_factory=dict)
    out: str = "rekit-out"
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)


# --- helpers -----------------------------------------------------------------


def _parse_coeffs(pairs: Sequence[str]) -> dict[str, float]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--coeff expects key=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError as exc:
            raise ValidationError(f"--coeff {key}: not a number: {value!r}") from exc
    return out


def _coefficients(cfg: RunConfig) -> KnowledgeCoefficients:
    overrides = dict(cfg.coefficients)
    overrides.setdefault("rng_seed", cfg.seed)
    try:
        return KnowledgeCoefficients().with_overrides(overrides)
    except (KeyError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


def _trajectories(scene, spec: str) -> list[tuple[str, list[int]]]:
    """Named receiver trajectories from ``all``, ``col:<c>[,<c>...]`` or ``rx:<i>,<j>,...``."""
    spec = (spec or "all").strip()
    if spec == "all":
        if scene.grid is None:
            return [("rx", list(range(scene.n_receivers)))]
        return [(f"col{c:03d}", column_trajectory(scene, c)) for c in range(int(scene.grid["cols"]))]
    kind, _, rest = spec.partition(":")
    try:
        values = [int(v) for v in rest.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad trajectory spec {spec!r}") from exc
    if kind == "col" and values:
        try:
            return [(f"col{c:03d}", column_trajectory(scene, c)) for c in values]
        except (IndexError, SceneError) as exc:
            raise ValidationError(str(exc)) from exc
    if kind == "rx" and values:
        bad = [v for v in values if not 0 <= v < scene.n_receivers]
        if bad:
            raise ValidationError(f"receiver indices out of range: {bad}")
        return [("rx", values)]
    raise ValidationError(f"bad trajectory spec {spec!r} (use all, col:<c,...> or rx:<i,...>)")


def _load_scene_or_fail(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"scene file not found: {path}")
    return load_scene(path)


def _resolve_scene(cfg: RunConfig):
    if cfg.scene:
        return _load_scene_or_fail(cfg.scene)
    if cfg.generate is not None:
        return _generated_scene(cfg.generate, cfg.seed)
    return _load_scene_or_fail(CANONICAL_SCENE_PATH)


def _generated_scene(gen: dict, seed: int):
    gen = dict(gen)
    scene_seed = int(substream(seed, "scene").integers(2**31 - 1))
    grid = gen.pop("grid", {"origin": {"x": 0.0, "y": 0.0, "z": 0.0}, "rows": 120, "cols": 61, "spacing": 0.5, "height": 1.5})
    tx = gen.pop("tx", [-75.0, 31.0, 20.0])
    freq = float(gen.pop("frequency_hz", 3.5e9))
    try:
        params = BooleanModelParams(
            region=tuple(gen.pop("region", (-120.0, -60.0, 150.0, 120.0))),
            density=float(gen.pop("density", 5e-4)),
            L_min=float(gen.pop("L_min", 10.0)),
            L_max=float(gen.pop("L_max", 30.0)),
            height_range=tuple(gen.pop("height_range", (5.0, 25.0))),
            seed=int(gen.pop("seed", scene_seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad generation parameters: {exc}") from exc
    if gen:
        raise ValidationError(f"unknown generation parameters {sorted(gen)}")
    o = grid["origin"]
    receivers = grid_receivers(
        (o["x"], o["y"], o["z"]), int(grid["rows"]), int(grid["cols"]), float(grid["spacing"]), float(grid["height"])
    )
    scene = generate_scene(params, tx=tx, receivers=receivers, frequency=freq)
    return scene.replace(grid=grid)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_spectra(rek_dir: Path) -> list[tuple[str, REKSpectrum]]:
    files = sorted(rek_dir.glob("spectrum_*.csv"))
    if not files:
        raise ValidationError(f"no spectrum CSVs in {rek_dir}")
    out = []
    for f in files:
        rows = read_csv(f)
        traj = [int(r["rx_index"]) for r in rows]
        mat = np.array([[float(r["RC"]), float(r["DC"]), float(r["BC"])] for r in rows]).reshape(-1, 3)
        out.append((f.stem.removeprefix("spectrum_"), REKSpectrum(traj, mat)))
    return out


def _read_labels(path: Path) -> dict[int, float]:
    if not path.exists():
        raise ValidationError(f"label file not found: {path}")
    return {int(r["rx_index"]): float(r["path_loss_db"]) for r in read_csv(path)}


def _dataset(out: Path):
    spectra = _read_spectra(out / "rek")
    labels = _read_labels(out / "oracle" / "path_loss.csv")
    lengths = {len(s.trajectory) for _, s in spectra}
    if len(lengths) != 1:
        raise ValidationError(f"trajectories have different lengths {sorted(lengths)}")
    try:
        y = np.array([[labels[i] for i in s.trajectory] for _, s in spectra])
    except KeyError as exc:
        raise ValidationError(f"no oracle label for receiver {exc}") from exc
    x = np.stack([to_tensor(s) for _, s in spectra])
    return spectra, x, y


# --- subcommands ------------------------------------------------------------------


def cmd_scene(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    if cfg.scene and not args.generate:
        scene = _load_scene_or_fail(cfg.scene)
        target = None
    else:
        scene = _generated_scene(cfg.generate or {}, cfg.seed) if (args.generate or cfg.generate is not None) else load_scene(CANONICAL_SCENE_PATH)
        target = out / "scene.json"
        save_scene(scene, target)
    lo, hi = scene.bounds()
    print(f"scatterers: {len(scene.scatterers)}")
    print(f"receivers: {scene.n_receivers}")
    print(f"tx: {scene.tx.tolist()}")
    print(f"bounds: {lo.tolist()} .. {hi.tolist()}")
    inside = scene.tx_inside()
    if inside:
        print(f"warning: transmitter inside scatterers {inside}")
    if target is not None:
        print(f"wrote {target}")
    return EXIT_OK


def cmd_rek(cfg: RunConfig, args=None) -> int:
    out = Path(cfg.out)
    scene = _resolve_scene(cfg)
    coeffs = _coefficients(cfg)
    side_rows = []
    for name, traj in _trajectories(scene, cfg.trajectory):
        spec = rek_spectrum(scene, traj, coeffs)
        write_spectrum_csv(out / "rek" / f"spectrum_{name}.csv", spec)
        for v in spec.vectors:
            side_rows.append(
                (
                    v.rx_index,
                    v.scenario.value,
                    " ".join(map(str, v.effective_ids)),
                    " ".join(map(str, v.ids_of(ScattererClass.BLOCKAGE))),
                    " ".join(map(str, v.ids_of(ScattererClass.IMPENDING_BLOCKAGE))),
                    "" if v.blocker_id is None else v.blocker_id,
                )
            )
    write_csv(
        out / "rek" / "classification.csv",
        ("rx_index", "scenario", "effective_ids", "blockage_ids", "impending_ids", "dominant_blocker"),
        side_rows,
    )
    print(f"wrote {len(side_rows)} REK rows to {out / 'rek'}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, args=None) -> int:
    out = Path(cfg.out)
    scene = _resolve_scene(cfg)
    samples = label_scene(scene)
    write_label_csvs(out / "oracle" / "path_loss.csv", out / "oracle" / "paths.csv", samples)
    # c_diag calibration against Fresnel-zone reference classes on a receiver subset
    labels = []
    for i in range(0, scene.n_receivers, REPORT_RX_STRIDE):
        labels += oracle_classes(scene, i)
    if labels:
        best, scores = grid_search_c_diag(scene, labels, return_scores=True)
        write_csv(
            out / "oracle" / "c_diag_search.csv",
            ("c_diag", "agreement", "selected"),
            ((c, n / len(labels), int(c == best)) for c, n in scores.items()),
        )
        print(f"c_diag grid search on {len(labels)} labelled pairs: best {best}")
    print(f"labelled {len(samples)} receivers into {out / 'oracle'}")
    return EXIT_OK


def _train_config(cfg: RunConfig) -> TrainConfig:
    kw = dict(cfg.train)
    kw.setdefault("seed", cfg.seed)
    try:
        return TrainConfig(**kw)
    except TypeError as exc:
        raise ValidationError(f"bad train config: {exc}") from exc


def cmd_train(cfg: RunConfig, args=None) -> int:
    out = Path(cfg.out)
    spectra, x, y = _dataset(out)
    tcfg = _train_config(cfg)
    result = train(x, y, tcfg)
    save_model(result.model, out / "model" / "model.npz")
    write_training_log(out / "model" / "train_log.csv", result.history)
    names = [n for n, _ in spectra]
    split = {
        "split": tcfg.split,
        "train": [names[i] for i in result.train_idx],
        "test": [names[i] for i in result.test_idx],
    }
    atomic_write_text(out / "model" / "split.json", json.dumps(split, indent=1) + "\n")
    last = result.history[-1]
    print(
        f"trained on {len(result.train_idx)} / tested on {len(result.test_idx)} trajectories, "
        f"{len(result.history)} epochs, test NRMSE {min(h['test_nrmse'] for h in result.history):.4f}, "
        f"final train NRMSE {last['train_nrmse']:.4f}, {result.seconds:.2f}s"
    )
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args=None) -> int:
    out = Path(cfg.out)
    model_path = Path(getattr(args, "model", None) or out / "model" / "model.npz")
    if not model_path.exists():
        raise ValidationError(f"model checkpoint not found: {model_path}")
    model = load_model(model_path)
    spectra = _read_spectra(out / "rek")
    label_path = out / "oracle" / "path_loss.csv"
    labels = _read_labels(label_path) if label_path.exists() else {}
    for name, spec in spectra:
        pred = predict(model, spec)
        rows = [(i, float(p), labels.get(i, "")) for i, p in zip(spec.trajectory, pred)]
        write_csv(out / "predict" / f"pred_{name}.csv", ("rx_index", "predicted_db", "oracle_db"), rows)
    print(f"wrote predictions for {len(spectra)} trajectories to {out / 'predict'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args=None) -> int:
    out = Path(cfg.out)
    split_path = out / "model" / "split.json"
    if not split_path.exists():
        raise ValidationError(f"split file not found: {split_path}")
    split = json.loads(split_path.read_text())
    preds = {}
    for name in split["train"] + split["test"]:
        f = out / "predict" / f"pred_{name}.csv"
        if not f.exists():
            raise ValidationError(f"prediction file not found: {f}")
        rows = read_csv(f)
        preds[name] = (
            np.array([float(r["predicted_db"]) for r in rows]),
            np.array([float(r["oracle_db"]) for r in rows]),
        )
    test_pred = np.concatenate([preds[n][0] for n in split["test"]])
    test_true = np.concatenate([preds[n][1] for n in split["test"]])
    train_pred = np.concatenate([preds[n][0] for n in split["train"]])
    train_true = np.concatenate([preds[n][1] for n in split["train"]])

    scene = _resolve_scene(cfg)
    coeffs = _coefficients(cfg)
    reports = []
    for i in range(0, scene.n_receivers, REPORT_RX_STRIDE):
        v = construct_rek(scene, i, coeffs)
        selected = sorted(set(v.reflections) | ({v.blocker_id} if v.blocker_id is not None else set()))
        ranked = rank_scatterers_by_power(path_loss(scene, i), top_n=25)
        reports.append(accuracy_report(i, selected, ranked))
    write_accuracy_csv(out / "eval" / "selection_accuracy.csv", reports)

    stats = {
        "test_true": summary_stats(test_true),
        "test_pred": summary_stats(test_pred),
    }
    write_stats_csv(out / "eval" / "summary_stats.csv", stats)
    write_cdf_csv(out / "eval" / "cdf_true.csv", test_true)
    write_cdf_csv(out / "eval" / "cdf_pred.csv", test_pred)

    model = load_model(out / "model" / "model.npz")
    spectra = dict(_read_spectra(out / "rek"))
    t0 = time.perf_counter()
    for n in split["test"]:
        predict(model, spectra[n])
    per_traj = (time.perf_counter() - t0) / max(len(split["test"]), 1)

    metrics = {
        "test_nrmse": nrmse(test_pred, test_true),
        "train_nrmse": nrmse(train_pred, train_true),
        "n_train_trajectories": len(split["train"]),
        "n_test_trajectories": len(split["test"]),
        "mean_selection_accuracy_percent": float(np.mean([r.percent for r in reports])),
    }
    atomic_write_text(out / "eval" / "metrics.json", json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    timing = {"predict_seconds_per_trajectory": per_traj}
    log_path = out / "model" / "train_log.csv"
    if log_path.exists():
        rows = read_csv(log_path)
        if rows:
            timing["train_seconds"] = float(rows[-1]["seconds"])
    atomic_write_text(out / "eval" / "timing.json", json.dumps(timing, indent=1, sort_keys=True) + "\n")
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return EXIT_OK


def write_manifest(out: Path, seed: int) -> Path:
    files = []
    for f in sorted(p for p in out.rglob("*") if p.is_file()):
        rel = f.relative_to(out).as_posix()
        if rel == "manifest.json" or f.name.startswith("."):
            continue
        entry = {"path": rel, "bytes": f.stat().st_size}
        if rel in VOLATILE:
            entry["volatile"] = True
            entry.pop("bytes")
        else:
            entry["sha256"] = _sha256(f)
        files.append(entry)
    target = out / "manifest.json"
    atomic_write_text(target, json.dumps({"seed": seed, "files": files}, indent=1) + "\n")
    return target


def cmd_run(cfg: RunConfig, args) -> int:
    if not args.all:
        raise ValidationError("run currently supports only --all")
    out = Path(cfg.out)
    scene = _resolve_scene(cfg)
    save_scene(scene, out / "scene.json")
    staged = RunConfig(**{**asdict(cfg), "scene": str(out / "scene.json"), "generate": None})
    for stage in (cmd_rek, cmd_oracle, cmd_train, cmd_predict, cmd_eval):
        log.info("stage %s", stage.__name__)
        stage(staged, args)
    manifest = write_manifest(out, cfg.seed)
    print(f"wrote {manifest}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", help="scene JSON file (default: bundled street canyon)")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trajectory", help="all | col:<c>[,<c>...] | rx:<i>,<j>,...")
    common.add_argument("--coeff", action="append", default=[], metavar="KEY=VALUE", help="knowledge coefficient override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rekit", description="Radio environment knowledge toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("scene", parents=[common], help="generate or validate a scene file")
    p.add_argument("--generate", action="store_true", help="draw a random line-Boolean scene")
    p.set_defaults(func=cmd_scene)
    sub.add_parser("rek", parents=[common], help="REK spectra per trajectory").set_defaults(func=cmd_rek)
    sub.add_parser("oracle", parents=[common], help="ray-tracing-lite path-loss labels").set_defaults(func=cmd_oracle)
    sub.add_parser("train", parents=[common], help="train the CNN predictor").set_defaults(func=cmd_train)
    p = sub.add_parser("predict", parents=[common], help="predict path loss per trajectory")
    p.add_argument("--model", help="checkpoint (default OUT/model/model.npz)")
    p.set_defaults(func=cmd_predict)
    sub.add_parser("eval", parents=[common], help="NRMSE, selection accuracy, statistics, CDFs").set_defaults(func=cmd_eval)
    p = sub.add_parser("run", parents=[common], help="run the whole pipeline")
    p.add_argument("--all", action="store_true", help="every stage, then write manifest.json")
    p.set_defaults(func=cmd_run)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.scene:
        cfg.scene = args.scene
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.trajectory:
        cfg.trajectory = args.trajectory
    cfg.coefficients = {**cfg.coefficients, **_parse_coeffs(args.coeff)}
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config_from_args(args)
        return args.func(cfg, args)
    except (ValidationError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - map every other failure to the runtime code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
