"""Command line entry point ``girko-lab``.

Usage::

    girko-lab <subcommand> [--config FILE] [--seeds K] [--workers W]
                           [--out DIR] [--emit-plot-script]

Without ``--config`` the subcommand runs its default experiment with
built-in settings.  The exit status is 0 when every check passes, 1 when a
check fails, 2 for configuration errors and 3 when too many cells fail.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .runner import EXPERIMENTS, RunAborted, run, write_outputs

SUBCOMMANDS = {
    "dyson": ("dyson-table",),
    "stab": ("stab-table",),
    "flow": ("flow-check",),
    "local-law": ("local-law-scan", "two-resolvent-scan"),
    "overlap": ("overlap-decay",),
    "clt": ("clt",),
    "girko": ("girko-consistency",),
    "resolvent-clt": ("resolvent-clt",),
}

PLOT_TEMPLATE = '''"""Plot the rows written by girko-lab ({experiment}, config {hash})."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path) as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
x = [float(r["{x}"]) for r in rows]
y = [abs(float(r["{y}"])) for r in rows]
fig, ax = plt.subplots()
ax.{plot}(x, y, ".", alpha=0.6)
ax.set_xlabel("{x}")
ax.set_ylabel("|{y}|")
ax.set_title("{experiment}")
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''

# (x column, y column, axes call) for the emitted plot script
PLOT_AXES = {
    "dyson-table": ("eta", "residual", "loglog"),
    "stab-table": ("eta1", "beta_minus_re", "loglog"),
    "flow-check": ("t", "bound_ratio", "plot"),
    "local-law-scan": ("n", "error", "loglog"),
    "two-resolvent-scan": ("n", "error", "loglog"),
    "overlap-decay": ("dz", "overlap", "loglog"),
    "clt": ("L_re", "L_im", "plot"),
    "girko-consistency": ("resolution", "rel_err", "loglog"),
    "resolvent-clt": ("g0_im", "g1_im", "plot"),
}


def default_config(experiment: str) -> ExperimentConfig:
    exp = EXPERIMENTS[experiment]
    return ExperimentConfig(
        experiment=experiment,
        n_list=exp.default_n_list,
        seeds=exp.default_seeds,
        base_seed=20240601,
        output_dir=f"results/{experiment}",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="girko-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, exps in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run {' or '.join(exps)}")
        p.add_argument("--config", type=Path, help="TOML experiment configuration")
        p.add_argument("--seeds", type=int, help="override the number of seeds")
        p.add_argument("--workers", type=int, help="worker processes (default: $GIRKO_LAB_WORKERS or 1)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--emit-plot-script", action="store_true", help="also write a matplotlib script")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    allowed = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args.config) if args.config else default_config(allowed[0])
        if cfg.experiment not in allowed:
            raise ConfigError(f"subcommand {args.command!r} runs {' or '.join(allowed)}, not {cfg.experiment!r}")
        cfg = cfg.with_overrides(seeds=args.seeds, output_dir=str(args.out) if args.out else None)
        result = run(cfg, workers=args.workers)
    except (ConfigError, OSError) as exc:
        print(f"girko-lab: error: {exc}", file=sys.stderr)
        return 2
    except RunAborted as exc:
        print(f"girko-lab: aborted: {exc}", file=sys.stderr)
        return 3

    csv_path, json_path = write_outputs(result)
    if args.emit_plot_script:
        x, y, plot = PLOT_AXES[cfg.experiment]
        script = PLOT_TEMPLATE.format(
            experiment=cfg.experiment, hash=result.config.hash(), csv=csv_path, x=x, y=y, plot=plot
        )
        (csv_path.parent / f"plot_{csv_path.stem}.py").write_text(script)
    for name, chk in result.checks.items():
        print(f"{'PASS' if chk['passed'] else 'FAIL'}  {name}: value={chk['value']} threshold={chk['threshold']}")
    print(f"rows: {csv_path}\nsummary: {json_path}")
    return 0 if result.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
