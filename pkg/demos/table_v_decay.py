"""Solve the two-block Gauss-Volterra power game of configs/table_v.yaml and plot the decay of |x|."""
import sys
from pathlib import Path

from mftg.cli import cmd_reproduce_figure
from mftg.config import load_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "table_v.yaml"

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "demo_table_v"
    cfg = load_config(CONFIG).with_overrides(out=out)
    Path(out).mkdir(parents=True, exist_ok=True)
    report = cmd_reproduce_figure(cfg, out)
    print("decreasing:", report["decay"]["decreasing"], "| figure:", Path(out) / "figure.svg")
