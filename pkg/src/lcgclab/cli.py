"""Command-line entry points.

    lcgclab train <config>
    lcgclab sweep-lambda <config> [--values 0,0.2,...]
    lcgclab ablate-baseline <config> [--colors red,blue,...]
    lcgclab ablate-components <config>
    lcgclab export-dataset <config> <path>

Exports pick their format from the extension: .csv writes the readable
view, anything else the binary container.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config
from .data import export_csv, save_dataset, synthesize
from .errors import ConfigError
from .runner import ablate_baseline_colors, ablate_components, run, sweep_lambda


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a key = value config file")
    p.add_argument(
        "--output",
        default=None,
        help="override the config's output directory",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcgclab",
        description=(
            "Debiased semi-supervised training on synthetic long-tailed data."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config(sub.add_parser("train", help="train all seeds in the config"))
    p_sweep = sub.add_parser(
        "sweep-lambda", help="sweep the conflict-correction scale"
    )
    _add_config(p_sweep)
    p_sweep.add_argument(
        "--values",
        default=None,
        help="comma-separated lambda values (default 0.0..1.4 step 0.2)",
    )
    p_colors = sub.add_parser(
        "ablate-baseline", help="compare probe colors for refinement"
    )
    _add_config(p_colors)
    p_colors.add_argument(
        "--colors", default=None, help="comma-separated subset of colors"
    )
    _add_config(
        sub.add_parser(
            "ablate-components", help="switch off one mechanism at a time"
        )
    )
    p_export = sub.add_parser(
        "export-dataset", help="materialize the config's dataset to a file"
    )
    p_export.add_argument("config")
    p_export.add_argument(
        "path", help="output file; .csv for the readable view, else binary"
    )
    return parser


def _fmt_row(row: dict, key: str) -> str:
    return (
        f"  {row[key]:>28}  bacc {row['bacc_mean']:.4f} +- {row['bacc_se']:.4f}"
        f"  gm {row['gm_mean']:.4f}"
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        if args.command == "train":
            agg = run(config, out_dir=args.output)
            for entry in agg["per_seed"]:
                if entry.get("failed"):
                    print(f"  seed {entry['seed']}: FAILED")
                elif entry.get("diverged"):
                    print(
                        f"  seed {entry['seed']}: diverged at step "
                        f"{entry['divergence_step']}"
                    )
                else:
                    print(
                        f"  seed {entry['seed']}: bacc {entry['final_bacc']:.4f}"
                        f"  gm {entry['final_gm']:.4f}"
                    )
            print(
                f"{config.method}: bacc {agg['bacc_mean']:.4f} "
                f"+- {agg['bacc_se']:.4f} over {agg['n_completed']} seeds"
            )
            return 0 if agg["n_completed"] > 0 else 1

        if args.command == "sweep-lambda":
            values = None
            if args.values is not None:
                values = tuple(
                    float(s) for s in args.values.split(",") if s.strip()
                )
            rows = sweep_lambda(config, values=values, out_dir=args.output)
            for row in rows:
                print(_fmt_row(row, "lambda"))
            return 0

        if args.command == "ablate-baseline":
            colors = None
            if args.colors is not None:
                colors = tuple(
                    s.strip() for s in args.colors.split(",") if s.strip()
                )
            rows = ablate_baseline_colors(config, colors=colors, out_dir=args.output)
            for row in rows:
                print(_fmt_row(row, "color"))
            return 0

        if args.command == "ablate-components":
            rows = ablate_components(config, out_dir=args.output)
            for row in rows:
                print(_fmt_row(row, "variant"))
            return 0

        if args.command == "export-dataset":
            ds = synthesize(config.spec)
            path = Path(args.path)
            if path.suffix.lower() == ".csv":
                export_csv(ds, path)
            else:
                save_dataset(ds, path)
            print(
                f"wrote {path} ({ds.labeled_x.shape[0]} labeled, "
                f"{ds.unlabeled_x.shape[0]} unlabeled, "
                f"{ds.test_x.shape[0]} test)"
            )
            return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
