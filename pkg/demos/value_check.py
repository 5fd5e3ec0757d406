"""Solve every shipped configuration and compare Monte-Carlo costs with the analytic values."""
import sys
import time
from pathlib import Path

from mftg.config import load_config
from mftg.solver import integrate_backward
from mftg.sim import value_consistency

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main(R=100, M=100):
    for path in sorted(CONFIGS.glob("*.yaml")):
        if path.stem == "table_v":
            continue  # large instance, see table_v_decay.py
        cfg = load_config(path)
        t0 = time.perf_counter()
        game = cfg.build()
        sol = integrate_backward(game, substeps=cfg.substeps, check=cfg.check)
        rows = value_consistency(game, sol, R, M, seed=cfg.seed, mode=cfg.mode, gv_scheme=cfg.gv_scheme)
        cells = "  ".join(f"{r['player']}: mc={r['mc']:.5g} value={r['analytic']:.5g} z={r['z']:+.2f}" for r in rows)
        print(f"{path.stem:22s} {cells}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:3]))
