"""Figure rendering for trajectories, convergence sweeps, and demo runs.

Headless by design: the Agg backend is selected before pyplot loads, so
batch jobs never touch a display.  Output metadata is pinned to keep
repeated renders byte-comparable.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "save_trajectory_plot",
    "save_comparison_plot",
    "save_sweep_plot",
]

_DPI = 120
# savefig would otherwise stamp the matplotlib version string
_METADATA = {"Software": "bracketopt"}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(str(path), dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def save_trajectory_plot(traj, path, title=None):
    """All state components of one trajectory against time."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for k in range(traj.dim):
        ax.plot(traj.times, traj.states[:, k], lw=0.9, label=f"z{k + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    if traj.dim <= 10:
        ax.legend(loc="best", fontsize="small", ncol=2)
    _finish(fig, path)


def save_comparison_plot(approx, ideal, path, n_components=None,
                         reference=None, title=None):
    """Oscillatory trajectory (thin) over the averaged flow (bold).

    n_components restricts the plot to the leading components, which for
    a saddle demo means the primal block.  reference draws dashed
    horizontal lines, one per plotted component.
    """
    dim = approx.dim if n_components is None else int(n_components)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k in range(dim):
        c = colors[k % len(colors)]
        ax.plot(approx.times, approx.states[:, k], lw=0.5, color=c,
                alpha=0.45)
        ax.plot(ideal.times, ideal.states[:, k], lw=1.6, color=c,
                label=f"z{k + 1}")
        if reference is not None:
            ax.axhline(float(reference[k]), color=c, lw=0.9, ls="--",
                       alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small", ncol=2)
    _finish(fig, path)


def save_sweep_plot(pairs, path, title=None):
    """sup error against omega on log-log axes."""
    omegas = [w for w, _ in pairs]
    errors = [e for _, e in pairs]
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.loglog(omegas, errors, "o-", lw=1.2)
    ax.set_xlabel("omega")
    ax.set_ylabel("sup error")
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    _finish(fig, path)
