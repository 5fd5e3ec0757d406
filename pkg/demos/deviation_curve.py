"""Cost of one player in the log-state game when it scales its equilibrium gain by gamma."""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mftg.core import JumpSpec  # noqa: E402
from mftg.games import build, make_spec  # noqa: E402
from mftg.sim import gain_grid_search  # noqa: E402
from mftg.solver import integrate_backward  # noqa: E402

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "deviation_curve.png"
    game = build(make_spec("log_state", N=200, players=[dict(q=1.0, qT=1.0, r=1.0, b2=1.0)],
                           coef=dict(b1=0.1, sigma=0.2), x0=50.0, jump=JumpSpec(c=1.0, decay=5.0),
                           extra=dict(k=2)))
    sol = integrate_backward(game)
    gammas, costs, best = gain_grid_search(game, sol, 0, grid=np.linspace(0.25, 2.0, 36), R=20, M=20)
    print(f"argmin gamma = {best:.3f}, value = {game.value(sol)[0]:.5g}, min MC cost = {costs.min():.5g}")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(gammas, costs, "o-", ms=3)
    ax.axvline(1.0, color="k", lw=0.6)
    ax.set(xlabel="gain multiplier gamma", ylabel="expected cost")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print("wrote", out)
