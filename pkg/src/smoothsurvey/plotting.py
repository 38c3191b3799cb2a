"""Figures written next to the delimited outputs.

matplotlib is imported lazily so the numerical core never depends on it.
PNG metadata is stripped so identical inputs give identical files.
"""

import numpy as np

COLORS = {"ht": "#1b9e77", "hajek1": "#d95f02", "hajek2": "#7570b3", "target": "black"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update(
        {
            "font.size": 9,
            "axes.labelsize": 9,
            "legend.fontsize": 8,
            "figure.figsize": (6.0, 3.7),
            "axes.spines.top": False,
            "axes.spines.right": False,
            "svg.hashsalt": "smoothsurvey",
        }
    )
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def plot_estimates(path, curves, band=1.96):
    """Mean-curve estimates with pointwise ``± band·sd`` envelopes.

    ``curves`` maps estimator tag to ``(t, values, sd_or_None)``.
    """
    plt = _pyplot()
    fig, ax = plt.subplots()
    for tag, (t, values, sd) in curves.items():
        color = COLORS.get(tag)
        ax.plot(t, values, color=color, lw=1.2, label=tag)
        if sd is not None and np.all(np.isfinite(sd)):
            ax.fill_between(t, values - band * sd, values + band * sd, color=color, alpha=0.15, lw=0)
    ax.set_xlabel("t")
    ax.set_ylabel("estimated mean curve")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_cv(path, candidates, scores, selected):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ok = np.isfinite(scores)
    ax.plot(candidates[ok], scores[ok], "o-", color="#444444", ms=3, lw=1)
    ax.axvline(selected, color=COLORS["hajek1"], ls="--", lw=1, label=f"selected h = {selected:.4g}")
    ax.set_xscale("log")
    ax.set_xlabel("bandwidth h")
    ax.set_ylabel("CV(h)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_simulation(path, t, target, report_rows):
    """Empirical vs formula standard deviations per estimator.

    ``report_rows`` maps tag to ``(empirical_variance, formula_variance)``.
    """
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    ax0.plot(t, target, color=COLORS["target"], lw=1.2)
    ax0.set_xlabel("t")
    ax0.set_ylabel("smoothed population mean")
    for tag, (emp, formula) in report_rows.items():
        color = COLORS.get(tag)
        ax1.plot(t, np.sqrt(emp), "o", color=color, ms=4, label=f"{tag} empirical")
        ax1.plot(t, np.sqrt(np.clip(formula, 0, None)), "-", color=color, lw=1, label=f"{tag} formula")
    ax1.set_xlabel("t")
    ax1.set_ylabel("standard deviation")
    ax1.legend(frameon=False, ncol=2)
    _save(fig, path)


def plot_population(path, grid, values, strata, max_curves=60):
    plt = _pyplot()
    fig, ax = plt.subplots()
    labels = np.unique(strata)
    cmap = plt.get_cmap("tab10")
    for i, lab in enumerate(labels):
        rows = np.flatnonzero(strata == lab)[:max_curves]
        for r in rows:
            ax.plot(grid.instants, values[r], color=cmap(i % 10), lw=0.4, alpha=0.4)
        ax.plot(grid.instants, values[strata == lab].mean(axis=0), color=cmap(i % 10), lw=2, label=f"stratum {lab}")
    ax.set_xlabel("t")
    ax.set_ylabel("Y(t)")
    ax.legend(frameon=False)
    _save(fig, path)
