"""Sample fBm paths from the Volterra representation and compare the empirical covariance."""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mftg.core import TimeGrid  # noqa: E402
from mftg.noise import VolterraKernel, sample_gv_paths, stream  # noqa: E402

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "fbm_paths.png"
    grid = TimeGrid(1.0, 200)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for H in (0.3, 0.5, 0.8):
        kern = VolterraKernel.fbm(H)
        X = sample_gv_paths(kern, grid, 4000, stream(0, f"fbm-{H}"))
        axes[0].plot(grid.t, X[0], lw=0.8, label=f"H={H}")
        emp = (X * X[:, [100]]).mean(axis=0)
        axes[1].plot(grid.t, emp, lw=0.8, label=f"empirical H={H}")
        axes[1].plot(grid.t, kern.covariance(grid.t, 0.5), "k--", lw=0.6)
        print(f"H={H}: max |cov error| against t'=0.5 = {np.abs(emp - kern.covariance(grid.t, 0.5)).max():.3f}")
    axes[0].set(title="one path per H", xlabel="t")
    axes[1].set(title="Cov(B(t), B(0.5)), dashed: closed form", xlabel="t")
    for ax in axes:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print("wrote", out)
