"""Figure rendering for the command-line report path.

All plotting lives here, behind the CLI: the measurement layer returns
plain data, and these helpers turn a finished run into PNG files next to
the JSON/CSV output.  Uses the Agg backend so headless runs work.
"""

import math
import os


def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    return plt


def render_spectrum(path, summary):
    """Log-log increment spectrum with the fitted slope, when present."""
    rows = [r for r in summary["rows"] if r["energy"] > 0.0]
    if not rows:
        return None
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    lams = [r["lam"] for r in rows]
    energies = [r["energy"] for r in rows]
    ax.loglog(lams, energies, "o", color="tab:blue", label="E(lambda)")
    if summary.get("slope") is not None:
        lo, hi = min(lams), max(lams)
        xs = [lo, hi]
        ys = [math.exp(summary["intercept"]) * x ** summary["slope"]
              for x in xs]
        ax.loglog(xs, ys, "-", color="tab:orange",
                  label=f"fit slope {summary['slope']:.3f}")
    ax.set_xlabel("lambda")
    ax.set_ylabel("E")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_stress_decay(path, step_reports):
    """Per-stage stress supremum against the eta*delta_bar target."""
    if not step_reports:
        return None
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    stages = [rep.generation + 1 for rep in step_reports]
    sups = [max(rep.stress_sup, 1e-300) for rep in step_reports]
    targets = [rep.eta * rep.delta_bar for rep in step_reports]
    ax.semilogy(stages, sups, "o-", color="tab:red", label="stress sup")
    ax.semilogy(stages, targets, "s--", color="tab:gray",
                label="eta * delta_bar")
    ax.set_xlabel("stage")
    ax.set_ylabel("operator-norm sup")
    ax.set_xticks(stages)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_energy_margins(path, band_report):
    """Band margins of the final state over the time samples."""
    rows = band_report.rows
    if not rows:
        return None
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ts = [r["t_index"] for r in rows]
    margins = [r["margin"] for r in rows]
    ax.plot(ts, margins, "o-", color="tab:green", label="band margin")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("time sample")
    ax.set_ylabel("margin / (delta * e)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_run_figures(outdir, summary, step_reports, band_report):
    """Render the standard trio; returns the paths actually written."""
    written = []
    jobs = [
        ("spectrum.png", render_spectrum, (summary,)),
        ("stress_decay.png", render_stress_decay, (step_reports,)),
        ("energy_margins.png", render_energy_margins, (band_report,)),
    ]
    for name, fn, args in jobs:
        target = os.path.join(outdir, name)
        if fn(target, *args) is not None:
            written.append(target)
    return written
