"""Command line front end: solve | simulate | verify | reproduce-figure."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .config import RunConfig, load_config
from .errors import MftgError, ParseError, VerificationFailure
from .noise import brownian_increments, sample_gv_paths, stream
from .sim import (cooperative_dominance, deviation_test, estimate_cost, saddle_test, simulate,
                  value_consistency)
from .solver import integrate_backward

CHECKPOINTS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    """CSV with a header naming columns and units; floats with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# pipelines


def solve_config(cfg: RunConfig):
    game = cfg.build()
    sol = integrate_backward(game, substeps=cfg.substeps, check=cfg.check)
    return game, sol


def _owner_names(game, count):
    if count == game.P:
        return [p.name for p in game.spec.players]
    return ["all"] * count if count == 1 else [f"o{i}" for i in range(count)]


def cmd_solve(cfg: RunConfig, out: str) -> dict:
    game, sol = solve_config(cfg)
    t = game.grid.t
    states = game.gen.states
    rows = []
    for k, kind in enumerate(game.kinds):
        owners = _owner_names(game, sol.values.shape[2])
        for p, owner in enumerate(owners):
            comp = kind if game.aggregate else f"{kind}[{owner}]"
            for j, s in enumerate(states):
                for n in range(len(t)):
                    rows.append((t[n], s, comp, sol.values[n, k, p, j]))
    write_csv(os.path.join(out, "coefficients.csv"), ["t[time]", "regime[label]", "component[name]", "value[coef]"], rows)

    rows = []
    for name, arr in game.describe_feedback(sol):
        arr = np.asarray(arr)
        owners = _owner_names(game, arr.shape[1])
        for p, owner in enumerate(owners):
            for j, s in enumerate(states):
                for n in range(len(t)):
                    rows.append((t[n], s, owner, name, arr[n, p, j]))
    write_csv(os.path.join(out, "feedback_gains.csv"),
              ["t[time]", "regime[label]", "player[name]", "gain[name]", "value[control per state unit]"], rows)

    diag = dict(sol.diagnostics)
    report = {"variant": cfg.variant, "name": cfg.name, "T": cfg.T, "N": cfg.N, "solver": diag,
              "escaped": False, "positivity_clean": diag["positivity"]["clean"]}
    try:
        v = game.value(sol)
        report["value"] = dict(zip(_owner_names(game, len(v)), np.asarray(v, float).tolist()))
    except NotImplementedError:
        pass
    write_json(os.path.join(out, "diagnostics.json"), report)
    with open(os.path.join(out, "config.yaml"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dump())
    return {"game": game, "sol": sol, "report": report}


def _simulate(cfg, game, sol, record_paths=None):
    return simulate(game, sol, cfg.paths, cfg.particles, cfg.seed, mode=cfg.mode, gv_scheme=cfg.gv_scheme,
                    record_paths=cfg.record_paths if record_paths is None else record_paths)


def cmd_simulate(cfg: RunConfig, out: str) -> dict:
    res = cmd_solve(cfg, out)
    game, sol = res["game"], res["sol"]
    ens = _simulate(cfg, game, sol)
    t = game.grid.t
    states = game.gen.states
    names = [p.name for p in game.spec.players]
    rows = []
    if ens.sample_x is not None:
        rr, rm = ens.sample_x.shape[:2]
        for r in range(rr):
            for m in range(rm):
                for n in range(len(t)):
                    u = [ens.sample_u[i, r, m, n] for i in range(len(names))] if ens.sample_u is not None else []
                    rows.append([t[n], r, m, states[ens.regimes[r, n]], ens.sample_x[r, m, n]] + u)
    write_csv(os.path.join(out, "paths.csv"),
              ["t[time]", "path[index]", "particle[index]", "regime[label]", "x[state]"]
              + [f"u[{nm}][control]" for nm in names], rows)

    rows = []
    for r in range(ens.R):
        for n in range(len(t)):
            xb = ens.xbar[r, n] if ens.xbar is not None else float("nan")
            rows.append((t[n], r, states[ens.regimes[r, n]], xb,
                         ens.x_path[r, n] if ens.x_path is not None else float("nan"),
                         ens.absx_path[r, n] if ens.absx_path is not None else float("nan")))
    write_csv(os.path.join(out, "meanfield.csv"),
              ["t[time]", "path[index]", "regime[label]", "xbar[state]", "mean_x[state]", "mean_abs_x[state]"], rows)

    est = estimate_cost(ens)
    summary = {"R": ens.R, "M": ens.M, "seed": ens.seed, "meta": ens.meta,
               "objective_total": {"mean": est.mean, "se": est.se}}
    if not game.aggregate:
        summary["objective"] = {nm: {"mean": e.mean, "se": e.se}
                                for nm, e in ((nm, estimate_cost(ens, i)) for i, nm in enumerate(names))}
    write_json(os.path.join(out, "simulation.json"), summary)
    plot_ensemble(ens, out)
    return {**res, "ens": ens, "summary": summary}


def _gating_rows(cfg, game, sol):
    """All enabled checks as (check, detail, passed, table rows)."""
    v = cfg.verify_settings
    R, M, seed = cfg.paths, cfg.particles, cfg.seed
    kw = dict(mode=cfg.mode, gv_scheme=cfg.gv_scheme)
    out = []
    if v["value"]:
        for row in value_consistency(game, sol, R, M, seed, atol=v["atol"], **kw):
            out.append(("value", row["player"], row["passed"],
                        f"mc={row['mc']:.6g} analytic={row['analytic']:.6g} se={row['se']:.3g} "
                        f"|diff|={abs(row['mc'] - row['analytic']):.3g}"))
    if v["deviation"] and not game.aggregate:
        for i in range(game.P):
            res = deviation_test(game, sol, i, tuple(v["gammas"]), R, M, seed, **kw)
            for row in res["rows"]:
                out.append(("deviation", f"{res['player']} gamma={row['gamma']:g}", row["passed"],
                            f"delta={row['delta']:.6g} se={row['se']:.3g}"))
    if v["saddle"] and hasattr(game, "teams"):
        res = saddle_test(game, sol, (0.5, 2.0), R, M, seed, **kw)
        for row in res["rows"]:
            out.append(("saddle", f"{row['team']} gamma={row['gamma']:g}", row["passed"],
                        f"delta={row['delta']:.6g} se={row['se']:.3g}"))
    if v["cooperative"] and cfg.variant == "gv_power_cooperative":
        nash_cfg = RunConfig(**{**cfg.__dict__, "variant": "gv_power_nash"})
        ng, ns = solve_config(nash_cfg)
        res = cooperative_dominance(ng, ns, game, sol, R, M, seed, **kw)
        out.append(("cooperative", "total", res["passed"],
                    f"coop={res['coop']:.6g} nash={res['nash']:.6g} delta={res['delta']:.6g} se={res['se']:.3g}"))
    return out


def cmd_verify(cfg: RunConfig, out: str) -> dict:
    game, sol = solve_config(cfg)
    rows = _gating_rows(cfg, game, sol)
    width = max([len(f"{c} {d}") for c, d, _, _ in rows] + [10])
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for check, detail, passed, info in rows:
        lines.append(f"{(check + ' ' + str(detail)).ljust(width)}  {'PASS' if passed else 'FAIL'}    {info}")
    print("\n".join(lines))
    report = {"variant": cfg.variant, "name": cfg.name,
              "checks": [{"check": c, "detail": d, "passed": bool(p), "info": i} for c, d, p, i in rows],
              "passed": all(p for _, _, p, _ in rows)}
    write_json(os.path.join(out, "verify.json"), report)
    if not report["passed"]:
        raise VerificationFailure(f"{sum(not p for _, _, p, _ in rows)} of {len(rows)} checks failed")
    return report


def decay_profile(ens, checkpoints=CHECKPOINTS):
    """Ensemble mean of |x| at the checkpoint times and whether it strictly decreases."""
    grid = ens.game.grid
    nodes = [int(round(c * grid.N)) for c in checkpoints]
    vals = [float(ens.absx_path[:, n].mean()) for n in nodes]
    return {"t": [float(grid.t[n]) for n in nodes], "mean_abs_x": vals,
            "decreasing": bool(all(b < a for a, b in zip(vals, vals[1:])))}


def cmd_reproduce_figure(cfg: RunConfig, out: str) -> dict:
    res = cmd_simulate(cfg, out)
    ens = res["ens"]
    prof = decay_profile(ens)
    report = {"decay": prof, "positivity_clean": res["report"]["positivity_clean"]}
    write_json(os.path.join(out, "figure.json"), report)
    plot_figure(ens, cfg, out)
    print("mean |x| at t = " + ", ".join(f"{t:g}: {v:.6g}" for t, v in zip(prof["t"], prof["mean_abs_x"])))
    if not (prof["decreasing"] and report["positivity_clean"]):
        raise VerificationFailure("mean |x| is not strictly decreasing or positivity diagnostics failed")
    return report


# ---------------------------------------------------------------------------
# plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mftg"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_ensemble(ens, out):
    """state.svg, strategies.svg and meanfield.svg from a simulated ensemble."""
    plt = _pyplot()
    t = ens.game.grid.t
    names = [p.name for p in ens.game.spec.players]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    if ens.sample_x is not None:
        for r in range(ens.sample_x.shape[0]):
            for m in range(ens.sample_x.shape[1]):
                ax.plot(t, ens.sample_x[r, m], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("x(t)")
    ax.set_title("sample state paths")
    fig.tight_layout()
    _save(fig, os.path.join(out, "state.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    if ens.sample_u is not None:
        for i, nm in enumerate(names):
            ax.plot(t, ens.sample_u[i, 0, 0], lw=0.9, label=nm)
        ax.legend(fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("u(t)")
    ax.set_title("strategies on the first sample path")
    fig.tight_layout()
    _save(fig, os.path.join(out, "strategies.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    if ens.absx_path is not None:
        ax.plot(t, ens.absx_path.mean(axis=0), label="mean |x|")
    if ens.xbar is not None:
        ax.plot(t, ens.xbar.mean(axis=0), label="mean xbar")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("ensemble means")
    fig.tight_layout()
    _save(fig, os.path.join(out, "meanfield.svg"))
    plt.close(fig)


def plot_figure(ens, cfg, out):
    """Three panels: a state path, the strategies and sample noises."""
    plt = _pyplot()
    game = ens.game
    grid = game.grid
    t = grid.t
    names = [p.name for p in game.spec.players]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    ax = axes[0]
    ax.plot(t, ens.sample_x[0, 0], lw=0.9, label="x")
    if ens.xbar is not None:
        ax.plot(t, ens.xbar[0], lw=0.9, label="xbar")
    ax.set_title("(a) optimal state")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax = axes[1]
    for i, nm in enumerate(names):
        ax.plot(t, ens.sample_u[i, 0, 0], lw=0.9, label=nm)
    ax.set_title("(b) optimal strategies")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax = axes[2]
    rng = stream(cfg.seed, "figure-noise", 0)
    bm = np.concatenate([[0.0], np.cumsum(brownian_increments(grid, (1,), rng)[0])])
    ax.plot(t, bm, lw=0.8, label="B")
    kernel = game.spec.kernel
    if kernel is not None:
        gv = sample_gv_paths(kernel, grid, 1, stream(cfg.seed, "figure-noise", 1))[0]
        ax.plot(t, gv, lw=0.8, label=f"B_gv (H={kernel.H:g})" if kernel.H is not None else "B_gv")
    if game.S > 1:
        ax.step(t, ens.regimes[0], where="post", lw=0.8, label="regime index")
    ax.set_title("(c) sample noises")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, os.path.join(out, "figure.svg"))
    plt.close(fig)


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "reproduce-figure": cmd_reproduce_figure,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mftg", description="Solve, simulate and verify mean-field-type games.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
        p.add_argument("--paths", type=int, help="number of common paths R")
        p.add_argument("--particles", type=int, help="particles per common path M")
        p.add_argument("--grid", type=int, help="number of time steps N")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = load_config(args.config)
        except OSError as e:
            raise ParseError(None, f"cannot read {args.config}: {e.strerror or e}") from None
        cfg = cfg.with_overrides(seed=args.seed, paths=args.paths, particles=args.particles, N=args.grid,
                                 out=args.out)
        os.makedirs(cfg.out, exist_ok=True)
        t0 = time.perf_counter()
        COMMANDS[args.command](cfg, cfg.out)
        print(f"{args.command}: done in {time.perf_counter() - t0:.2f}s, outputs in {cfg.out}", file=sys.stderr)
        return 0
    except MftgError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
