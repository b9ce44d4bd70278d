"""Batch entry points wiring the pipeline end to end.

Subcommands: ``synth`` (generate a synthetic cohort), ``extract`` (feature
file from canonical recording dirs), ``run`` (LOPO experiment: metrics,
curves, predictions, model files, and ROC/PR figures), ``validate``
(schema-check recording dirs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines, dataio, evaluation, features, neuralprocess, synthgen


@dataclass
class RunConfig:
    features_csv: str = ""
    dataset: str = "synthetic"
    models: tuple[str, ...] = evaluation.GENERAL_MODELS
    strategies: tuple[str, ...] = ("baseline", "random")
    include_other_participant: bool = True
    epochs: int = 50
    learning_rate: float = 1e-3
    context_min: int = 5
    context_max: int = 10
    test_context_size: int = 6
    z_source_train: str = "target"
    kl_direction: str = "target_context"
    seed: int | None = None
    out_dir: str = "out"
    jobs: int = 0  # 0 = available cores
    figures: bool = True


_BOOL_KEYS = {"include_other_participant", "figures"}
_INT_KEYS = {"epochs", "context_min", "context_max", "test_context_size", "seed", "jobs"}
_FLOAT_KEYS = {"learning_rate"}
_LIST_KEYS = {"models", "strategies"}


def read_run_config(path: str | Path) -> RunConfig:
    """Flat ``key = value`` file; lists comma-separated, # starts a comment."""
    cfg = RunConfig()
    valid = set(RunConfig.__dataclass_fields__)
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise evaluation.ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in valid:
            raise evaluation.ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in _BOOL_KEYS:
            parsed = value.lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            parsed = int(value)
        elif key in _FLOAT_KEYS:
            parsed = float(value)
        elif key in _LIST_KEYS:
            parsed = tuple(v.strip() for v in value.split(",") if v.strip())
        else:
            parsed = value
        setattr(cfg, key, parsed)
    return cfg


def _fail(message: str, **fields) -> int:
    print(json.dumps({"error": message, **fields}), file=sys.stderr)
    return 1


def cmd_synth(args) -> int:
    out = Path(args.out)
    cohort = synthgen.gen_cohort(args.n, args.shape, args.seed)
    for rec, _truth in cohort:
        dataio.write_recording(rec, out / rec.participant_id)
    print(f"wrote {len(cohort)} recording dirs under {out}")
    return 0


def _recording_dirs(root: Path) -> list[Path]:
    if (root / "manifest.json").is_file():
        return [root]
    return sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())


def cmd_extract(args) -> int:
    root = Path(args.in_dir)
    dirs = _recording_dirs(root)
    if not dirs:
        return _fail("no recording directories found", path=str(root))
    stats = features.ExtractionStats()
    matrix = features.FeatureMatrix()
    for d in dirs:
        rec = dataio.load_recording(d)
        matrix.rows.extend(features.extract_features(rec, stats=stats).rows)
    matrix.sort()
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    features.write_features_csv(matrix, out_csv)
    stats_path = out_csv.with_suffix(".stats.json")
    stats_path.write_text(json.dumps(stats.as_dict(), indent=2) + "\n")
    print(f"{stats.rows_emitted} windows from {len(dirs)} recordings -> {out_csv} "
          f"(dropped: {stats.dropped_few_rr + stats.dropped_nonfinite}; stats: {stats_path})")
    return 0


def cmd_run(args) -> int:
    cfg = read_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if cfg.seed is None:
        return _fail("seed is required (config key 'seed' or --seed)", field="seed")
    if not cfg.features_csv:
        return _fail("features_csv is required", field="features_csv")

    matrix = features.read_features_csv(cfg.features_csv)
    exp = evaluation.ExperimentConfig(
        dataset=cfg.dataset,
        models=tuple(cfg.models),
        strategies=tuple(cfg.strategies),
        include_other_participant=cfg.include_other_participant,
        test_context_size=cfg.test_context_size,
        seed=cfg.seed,
        train=neuralprocess.TrainConfig(
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            context_min=cfg.context_min,
            context_max=cfg.context_max,
            seed=cfg.seed,
            z_source_train=cfg.z_source_train,
            kl_direction=cfg.kl_direction,
        ),
    )
    jobs = cfg.jobs if cfg.jobs > 0 else (os.cpu_count() or 1)
    report = evaluation.run_experiment(matrix, exp, jobs=jobs)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_metrics_csv(report, out / "metrics.csv")
    evaluation.write_curves_csv(report, out / "curves.csv")
    evaluation.write_predictions_csv(report, out / "predictions.csv")
    _write_models(report, out / "models")
    if cfg.figures:
        render_curve_figures(report, out / "figures")
    print(f"report written to {out}")
    return 0


def _write_models(report: evaluation.MetricsReport, model_dir: Path) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    for (name, strategy, pid), model in sorted(report.models.items()):
        suffix = f"_{strategy}" if strategy else ""
        path = model_dir / f"{name}{suffix}_fold_{pid}.json"
        if name == "np":
            neuralprocess.save_np_params(model, path)
        else:
            baselines.save_model(model, path)


def render_curve_figures(report: evaluation.MetricsReport, fig_dir: Path) -> list[Path]:
    """Render pooled ROC and PR curves to PNG files next to the CSV output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    labels = {"roc": ("False positive rate", "True positive rate"),
              "pr": ("Recall", "Precision")}
    for curve in ("roc", "pr"):
        fig, ax = plt.subplots(figsize=(6, 5))
        keys = sorted({(m, s) for m, s, c, _, _ in report.curves if c == curve})
        for model, strategy in keys:
            pts = [(x, y) for m, s, c, x, y in report.curves
                   if (m, s, c) == (model, strategy, curve)]
            name = f"{model} ({strategy})" if strategy else model
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name, linewidth=1.5)
        if curve == "roc":
            ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)
        ax.set_xlabel(labels[curve][0])
        ax.set_ylabel(labels[curve][1])
        ax.set_title(f"Pooled {curve.upper()} curves")
        ax.legend(loc="lower right" if curve == "roc" else "lower left", fontsize=8)
        fig.tight_layout()
        path = fig_dir / f"{curve}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def cmd_validate(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        return _fail("not a directory", path=str(root))
    dirs = _recording_dirs(root)
    if not dirs:
        return _fail("no recording directories found", path=str(root))
    n_errors = 0
    for d in dirs:
        errors = dataio.validate_recording_dir(d)
        status = "ok" if not errors else "FAIL"
        print(f"{d}: {status}")
        for e in errors:
            print(f"  {e}")
        n_errors += len(errors)
    if n_errors:
        return _fail(f"{n_errors} schema error(s) in {len(dirs)} recording dir(s)")
    print(f"{len(dirs)} recording dir(s) valid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stressnp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort of recording dirs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--shape", choices=["wesad", "drivedb"], default="wesad")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract the feature CSV from recording dirs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run", help="run the LOPO experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="schema-check recording dirs")
    p.add_argument("dir")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (dataio.LoadError, dataio.ValidationError, evaluation.ConfigError, ValueError) as e:
        code = _fail(str(e), **({"field": e.field} if hasattr(e, "field") else {}))
        return code


if __name__ == "__main__":
    sys.exit(main())
