"""Multi-seed experiment driver, sweeps, and ablations.

Every entry point writes its artifacts (per-step CSVs, per-seed JSON,
aggregate JSON/CSV) under the config's output root and also returns
them. Seeds are isolated: an unexpected failure in one seed is recorded
and the remaining seeds still run. All files are written atomically
with sorted JSON keys, so repeated runs of the same config produce
byte-identical artifacts except for wall-clock fields.
"""

from __future__ import annotations

import time
import traceback
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import SynthDataset, synthesize
from .debias import BASELINE_COLORS, RunRecord, run_training
from .errors import ConfigError
from .fileio import atomic_write_text, dump_json

_STEP_COLUMNS = (
    "step",
    "loss_sup",
    "loss_con",
    "loss_kl",
    "conflict",
    "cos_angle",
    "mask_rate",
)

# Table row order for the lambda sweep: 0.0 to 1.4 in steps of 0.2.
DEFAULT_LAMBDAS = tuple(round(0.2 * i, 1) for i in range(8))


def _steps_csv(run: RunRecord) -> str:
    lines = [",".join(_STEP_COLUMNS)]
    for r in run.steps:
        lines.append(
            ",".join(
                (
                    str(r.step),
                    repr(r.loss_sup),
                    repr(r.loss_con),
                    repr(r.loss_kl),
                    str(int(r.conflict)),
                    repr(r.cos_angle),
                    repr(r.mask_rate),
                )
            )
        )
    return "\n".join(lines) + "\n"


def _mean_se(vals) -> tuple[float, float]:
    v = np.asarray(list(vals), dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def run(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    dataset: SynthDataset | None = None,
) -> dict:
    """Train every seed in the config and aggregate the results.

    Returns the aggregate dict (also written to aggregate.json). A
    reusable dataset can be passed in to share one realization across
    sweep points; by default it is synthesized from the config.
    """
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else config.output_root()
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset if dataset is not None else synthesize(config.spec)
    settings = config.train_settings()

    per_seed: list[dict] = []
    baccs: list[float] = []
    gms: list[float] = []
    for seed in config.seeds:
        try:
            _, record = run_training(ds, config.hidden, settings, seed)
        except Exception:
            per_seed.append(
                {
                    "seed": seed,
                    "failed": True,
                    "error": traceback.format_exc(limit=10),
                }
            )
            continue
        atomic_write_text(out / f"steps_seed{seed}.csv", _steps_csv(record))
        entry = record.to_dict()
        entry["failed"] = False
        dump_json(out / f"run_seed{seed}.json", entry)
        per_seed.append(entry)
        if not record.diverged:
            baccs.append(record.final_bacc)
            gms.append(record.final_gm)

    bacc_mean, bacc_se = _mean_se(baccs)
    gm_mean, gm_se = _mean_se(gms)
    aggregate = {
        "config": config.resolved(),
        "per_seed": per_seed,
        "n_seeds": len(config.seeds),
        "n_completed": len(baccs),
        "n_failed": sum(1 for e in per_seed if e.get("failed")),
        "n_diverged": sum(1 for e in per_seed if e.get("diverged")),
        "bacc_mean": bacc_mean,
        "bacc_se": bacc_se,
        "gm_mean": gm_mean,
        "gm_se": gm_se,
        "wall_time_s": time.perf_counter() - t0,
    }
    dump_json(out / "aggregate.json", aggregate)
    return aggregate


def _table_csv(rows: list[dict], columns: tuple[str, ...]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row[c]
            cells.append(repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def sweep_lambda(
    config: ExperimentConfig,
    values: tuple[float, ...] | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Run the lcgc method across correction scales on a shared dataset.

    Defaults to 0.0 .. 1.4 in steps of 0.2; 0.0 is the refinement-only
    reference point. Writes lambda_sweep.csv / lambda_sweep.json.
    """
    values = DEFAULT_LAMBDAS if values is None else tuple(values)
    if any(v < 0.0 for v in values):
        raise ConfigError("lambda values must be nonnegative")
    out = Path(out_dir) if out_dir is not None else config.output_root()
    ds = synthesize(config.spec)
    rows = []
    for lam in values:
        sub = config.override(method="lcgc", lam=float(lam))
        agg = run(sub, out_dir=out / f"lambda_{lam:g}", dataset=ds)
        rows.append(
            {
                "lambda": float(lam),
                "bacc_mean": agg["bacc_mean"],
                "bacc_se": agg["bacc_se"],
                "gm_mean": agg["gm_mean"],
                "gm_se": agg["gm_se"],
                "n_completed": agg["n_completed"],
            }
        )
    atomic_write_text(
        out / "lambda_sweep.csv",
        _table_csv(
            rows,
            ("lambda", "bacc_mean", "bacc_se", "gm_mean", "gm_se", "n_completed"),
        ),
    )
    dump_json(out / "lambda_sweep.json", rows)
    return rows


def ablate_baseline_colors(
    config: ExperimentConfig,
    colors: tuple[str, ...] | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Re-run the config once per probe color on a shared dataset.

    Requires a method with refinement active (cdmad or lcgc); with the
    plain baseline method the probe is unused and the ablation would
    compare identical runs.
    """
    if config.method == "baseline":
        raise ConfigError(
            "baseline-color ablation needs refinement active; "
            "set method = cdmad or method = lcgc"
        )
    colors = BASELINE_COLORS if colors is None else tuple(colors)
    for c in colors:
        if c not in BASELINE_COLORS:
            raise ConfigError(
                f"unknown baseline color {c!r}; choose from {BASELINE_COLORS}"
            )
    out = Path(out_dir) if out_dir is not None else config.output_root()
    ds = synthesize(config.spec)
    rows = []
    for color in colors:
        sub = config.override(baseline_color=color)
        agg = run(sub, out_dir=out / f"baseline_{color}", dataset=ds)
        rows.append(
            {
                "color": color,
                "bacc_mean": agg["bacc_mean"],
                "bacc_se": agg["bacc_se"],
                "gm_mean": agg["gm_mean"],
                "gm_se": agg["gm_se"],
                "n_completed": agg["n_completed"],
            }
        )
    atomic_write_text(
        out / "baseline_colors.csv",
        _table_csv(
            rows,
            ("color", "bacc_mean", "bacc_se", "gm_mean", "gm_se", "n_completed"),
        ),
    )
    dump_json(out / "baseline_colors.json", rows)
    return rows


def ablate_components(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> list[dict]:
    """Switch off one mechanism at a time, starting from the full method.

    Rows: full method, pseudo-label refinement off, test-time
    refinement off, and a 0.95 confidence threshold instead of taking
    every pseudo-label. Requires method = lcgc.
    """
    if config.method != "lcgc":
        raise ConfigError("component ablation requires method = lcgc")
    out = Path(out_dir) if out_dir is not None else config.output_root()
    ds = synthesize(config.spec)
    variants = (
        ("full", config),
        (
            "no_pseudo_label_refinement",
            config.override(refine_pseudo_labels=False),
        ),
        ("no_test_refinement", config.override(refine_at_test=False)),
        ("tau_0.95", config.override(tau=0.95)),
    )
    rows = []
    for name, sub in variants:
        agg = run(sub, out_dir=out / f"component_{name}", dataset=ds)
        rows.append(
            {
                "variant": name,
                "bacc_mean": agg["bacc_mean"],
                "bacc_se": agg["bacc_se"],
                "gm_mean": agg["gm_mean"],
                "gm_se": agg["gm_se"],
                "n_completed": agg["n_completed"],
            }
        )
    atomic_write_text(
        out / "components.csv",
        _table_csv(
            rows,
            ("variant", "bacc_mean", "bacc_se", "gm_mean", "gm_se", "n_completed"),
        ),
    )
    dump_json(out / "components.json", rows)
    return rows
