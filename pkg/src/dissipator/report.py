"""Report assembly: versioned JSON document, spectrum summary, CSV.

The JSON rendering is deterministic (sorted keys, fixed indentation, no
timestamps unless timing is explicitly requested), so two identical runs
produce byte-identical report files.
"""

import json

from .diagnostics import increments_from_states, spectrum_measure
from .errors import ConfigError

DOCUMENT_VERSION = 1


def spectrum_rows(lams, increments):
    """Spectrum dict for paired (frequency, mean-square increment) lists.

    Delegates to the least-squares fit when at least three points are
    available; below that the rows are tabulated but slope / intercept /
    fit_residual stay None (a two-point log-log fit is not a measurement).
    """
    if len(lams) != len(increments):
        raise ConfigError("one increment per frequency required")
    if len(lams) >= 3:
        return spectrum_measure(lams, increments).as_dict()
    rows = [{"n": n, "lam": float(lam), "increment": float(inc),
             "energy": float(inc / lam)}
            for n, (lam, inc) in enumerate(zip(lams, increments))]
    return {"rows": rows, "slope": None, "intercept": None,
            "fit_residual": None}


def spectrum_summary(states, step_reports):
    """Increment spectrum of a run: one row per completed stage."""
    if not step_reports:
        return {"rows": [], "slope": None, "intercept": None,
                "fit_residual": None}
    lams = [rep.lam for rep in step_reports]
    increments = increments_from_states(states[:len(step_reports) + 1])
    return spectrum_rows(lams, increments)


def spectrum_csv_lines(summary):
    out = ["n,lambda,E,increment"]
    for r in summary["rows"]:
        out.append(f"{r['n']},{r['lam']:.17g},{r['energy']:.17g},"
                   f"{r['increment']:.17g}")
    return out


def report_document(config_doc, run_report, spectrum, include_timing=False):
    return {
        "version": DOCUMENT_VERSION,
        "config": config_doc,
        "run": run_report.as_dict(include_timing=include_timing),
        "spectrum": spectrum,
    }


def render_json(doc):
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
