"""Figures for grid reports: validation-loss curves and accuracy versus noise rate."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
COLORS = {
    "NO_KD": "#7f7f7f",
    "SELF_DSTL": "#bcbd22",
    "VANILLA": "#1f77b4",
    "CD": "#ff7f0e",
    "CD_LR": "#d62728",
}


def _curves_for(report, method, rate):
    by_id = {c["cell_id"]: c for c in report["cells"] if c["status"] == "ok"}
    row = next((r for r in report["table"] if r["method"] == method and r["rate"] == rate), None)
    if row is None:
        return []
    return [[rec["val_loss"] for rec in by_id[p["cell_id"]]["result"]["records"]]
            for p in row["per_seed"] if p["cell_id"] in by_id]


def mean_curve(curves):
    """Epoch-wise mean over runs that reached each epoch (runs stop early at different times)."""
    if not curves:
        return np.array([])
    length = max(len(c) for c in curves)
    out = np.full(length, np.nan)
    for i in range(length):
        vals = [c[i] for c in curves if len(c) > i]
        out[i] = np.mean(vals)
    return out


def plot_val_loss(report, rate, path):
    refine_epoch = report["grid"]["refine_epoch"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for method in report["grid"]["methods"]:
            curve = mean_curve(_curves_for(report, method, rate))
            if curve.size:
                ax.plot(np.arange(1, curve.size + 1), curve, marker="o", ms=2.5,
                        color=COLORS.get(method), label=method)
        if "CD_LR" in report["grid"]["methods"]:
            ax.axvline(refine_epoch, color="0.6", ls=":", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("student val loss (noisy labels)")
        ax.set_title(f"{rate:.0%} label noise", fontsize=9)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_noise_trend(report, path):
    rates = report["grid"]["noise_rates"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for method in report["grid"]["methods"]:
            ys = []
            for rate in rates:
                row = next((r for r in report["table"] if r["method"] == method and r["rate"] == rate), None)
                ys.append(np.nan if row is None or row["student_mean"] is None else row["student_mean"])
            ax.plot(rates, ys, marker="s", ms=3, color=COLORS.get(method), label=method)
        ax.set_xlabel("noise rate")
        ax.set_ylabel(f"student clean {report['grid']['task_metric']}")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_figures(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = [plot_noise_trend(report, os.path.join(out_dir, "noise_trend.png"))]
    for rate in report["grid"]["noise_rates"]:
        name = f"val_loss_r{rate:.2f}.png"
        paths.append(plot_val_loss(report, rate, os.path.join(out_dir, name)))
    return paths
