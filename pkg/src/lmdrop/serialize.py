"""Plain-text output files for fits, criteria and decoding tables."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import __version__
from .chain import chain_from_items
from .data import Dataset, read_key_values, write_key_values
from .em import FitResult
from .inference import (
    CRITERIA,
    CriteriaRow,
    average_state_probs,
    classification_index,
    decode_at_attrition,
    local_decode,
)
from .likelihood import ParameterSet, Posteriors

CRITERIA_COLUMNS = ["model", "J", "k", "loglik", *CRITERIA]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "NA" if math.isnan(v) else repr(float(v))
    return str(v)


def write_params(path, theta: ParameterSet, data: Dataset) -> None:
    write_key_values(path, theta.items(data.x1_names, data.x2_names))


def read_params(path, summary: dict) -> ParameterSet:
    """Rebuild a parameter set from ``params.txt`` and the ``fit.txt`` summary."""
    kv = {k: float(v) for k, v in read_key_values(path).items()}
    J, p1, p2 = int(summary["n_states"]), int(summary["p1"]), int(summary["p2"])
    kind = summary["chain_kind"]
    values = list(kv.values())
    beta = np.array(values[:p1])
    u = np.array(values[p1 : p1 + J * p2]).reshape(J, p2)
    chain_items = dict(list(kv.items())[p1 + J * p2 :])
    chain = chain_from_items(chain_items, J, kind, int(summary["horizon"]))
    return ParameterSet(beta, u, chain)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for r, ll in enumerate(trace):
            w.writerow([r, repr(float(ll))])


def write_posteriors(path, data: Dataset, post: Posteriors) -> None:
    J = post.n_states
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time"] + [f"state_{j + 1}" for j in range(J)])
        for i, p in enumerate(data.panels):
            for t, row in enumerate(post.subject_xi(i)):
                w.writerow([p.subject_id, t + 1] + [repr(float(v)) for v in row])


def write_decoding(outdir, data: Dataset, post: Posteriors) -> dict:
    """Decoded sequences, attrition table and average state probabilities.

    Returns a summary with the classification index (when ``J >= 2``).
    """
    outdir = Path(outdir)
    J, T = post.n_states, data.horizon
    states, ties = local_decode(post)
    with open(outdir / "decoded.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", "state", "tie"])
        for p, seq, tie in zip(data.panels, states, ties):
            for t, (s, flag) in enumerate(zip(seq, tie)):
                w.writerow([p.subject_id, t + 1, int(s) + 1, int(flag)])
    table = decode_at_attrition(data, post)
    with open(outdir / "attrition.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state"] + [str(t + 1) for t in range(T)])
        for j in range(J):
            w.writerow([j + 1] + table[j].tolist())
    probs = average_state_probs(post, T)
    with open(outdir / "state_probs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"state_{j + 1}" for j in range(J)])
        for t in range(T):
            w.writerow([t + 1] + [_fmt(v) for v in probs[t]])
    summary = {"n_ties": int(sum(int(t.sum()) for t in ties))}
    if J >= 2:
        summary["H"] = classification_index(post)
    return summary


def fit_summary(fit: FitResult, data: Dataset, k: int) -> list[tuple[str, object]]:
    return [
        ("model", fit.model),
        ("variant", fit.variant),
        ("chain_kind", fit.theta.kind),
        ("n_states", fit.n_states),
        ("p1", data.p1),
        ("p2", data.p2),
        ("horizon", data.horizon),
        ("n", data.n),
        ("k", k),
        ("loglik", float(fit.loglik)),
        ("n_iter", fit.n_iter),
        ("converged", str(fit.converged).lower()),
        ("refined", str(fit.refined).lower()),
        ("spurious", str(fit.spurious_flag).lower()),
        ("flags", ",".join(sorted(fit.flags)) or "none"),
    ]


def save_fit(outdir, fit: FitResult, data: Dataset, k: int) -> dict:
    """Write every per-fit file into ``outdir``; returns the summary mapping."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_params(outdir / "params.txt", fit.theta, data)
    write_trace(outdir / "trace.csv", fit.loglik_trace)
    write_posteriors(outdir / "posteriors.csv", data, fit.posteriors)
    extra = write_decoding(outdir, data, fit.posteriors)
    summary = fit_summary(fit, data, k) + list(extra.items())
    write_key_values(outdir / "fit.txt", summary)
    return dict(summary)


def load_fit(outdir) -> tuple[ParameterSet, dict]:
    outdir = Path(outdir)
    summary = read_key_values(outdir / "fit.txt")
    return read_params(outdir / "params.txt", summary), summary


def write_criteria(path, rows: list[tuple[str, int, CriteriaRow]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CRITERIA_COLUMNS)
        for model, J, row in rows:
            w.writerow([model, J, row.k, _fmt(row.loglik)] + [_fmt(getattr(row, c)) for c in CRITERIA])


def best_by_criterion(rows: list[tuple[str, int, CriteriaRow]]) -> dict:
    """``criterion -> (model, J)`` minimizing it (undefined values skipped)."""
    best = {}
    for c in CRITERIA:
        scored = [(getattr(r, c), m, J) for m, J, r in rows if not math.isnan(getattr(r, c))]
        if scored:
            _, m, J = min(scored)
            best[c] = (m, J)
    return best


def write_manifest(path, items) -> None:
    write_key_values(path, [("software", f"lmdrop {__version__}")] + list(items))
