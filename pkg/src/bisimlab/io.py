"""Plain-text file formats.

Tensors are written as whitespace-separated decimals with 17 significant
digits (``%.17g``), which round-trips IEEE doubles exactly.  Every file starts
with a ``# bisimlab <kind>`` header followed by ``key value`` lines and named
blocks of rows:

finite-mdp
    ``n_states``, ``n_actions``, ``discount``; block ``transition`` with one
    row per (state, action) in row-major order; block ``reward`` with one row
    per state.
tabular-policy
    ``n_states``, ``n_actions``; block ``probs``.
state-metric
    ``n_states``, ``status``; block ``values``.
bisimilar-pairs
    ``n_states``; line ``origin`` followed by one index per state; block
    ``pairs`` with one ``i j`` row per pair.
separable-distance
    ``state_dim``; line ``powers`` followed by the exponents; block
    ``weights`` with one row per coordinate.

CSV reports use fixed headers (see ``REPORT_COLUMNS`` and ``HISTORY_COLUMNS``).
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from bisimlab.mdp import BisimilarPairSet, FiniteMDP, TabularPolicy

REPORT_COLUMNS = ("method", "mode", "z", "z_prime", "n", "mean", "stderr", "exact", "bias", "seed")
HISTORY_COLUMNS = ("step", "loss", "sup_error")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _rows(arr) -> list[str]:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    return [" ".join(fmt(v) for v in row) for row in arr]


def _header(kind: str, **fields) -> list[str]:
    return [f"# bisimlab {kind}"] + [f"{k} {v}" for k, v in fields.items()]


def _parse(text: str, kind: str) -> tuple[dict, dict]:
    """Split a file into scalar fields and named row blocks."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != f"# bisimlab {kind}":
        raise ValueError(f"not a bisimlab {kind} file")
    fields, blocks, current = {}, {}, None
    for ln in lines[1:]:
        tokens = ln.split()
        if len(tokens) == 1 and not _is_number(tokens[0]):
            current = tokens[0]
            blocks[current] = []
        elif current is None:
            fields[tokens[0]] = tokens[1:] if len(tokens) > 2 else tokens[1]
        else:
            blocks[current].append([float(t) for t in tokens])
    return fields, blocks


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def format_mdp(mdp: FiniteMDP) -> str:
    S, A = mdp.n_states, mdp.n_actions
    lines = _header("finite-mdp", n_states=S, n_actions=A, discount=fmt(mdp.discount))
    lines += ["transition"] + _rows(mdp.transition.reshape(S * A, S))
    lines += ["reward"] + _rows(mdp.reward)
    return "\n".join(lines) + "\n"


def parse_mdp(text: str) -> FiniteMDP:
    fields, blocks = _parse(text, "finite-mdp")
    S, A = int(fields["n_states"]), int(fields["n_actions"])
    P = np.array(blocks["transition"], dtype=float).reshape(S, A, S)
    R = np.array(blocks["reward"], dtype=float).reshape(S, A)
    return FiniteMDP(P, R, float(fields["discount"]))


def format_policy(policy: TabularPolicy) -> str:
    lines = _header("tabular-policy", n_states=policy.n_states, n_actions=policy.n_actions)
    return "\n".join(lines + ["probs"] + _rows(policy.probs)) + "\n"


def parse_policy(text: str) -> TabularPolicy:
    fields, blocks = _parse(text, "tabular-policy")
    S, A = int(fields["n_states"]), int(fields["n_actions"])
    return TabularPolicy(np.array(blocks["probs"], dtype=float).reshape(S, A))


def format_metric(d, status: str = "converged") -> str:
    d = np.asarray(d, dtype=float)
    lines = _header("state-metric", n_states=d.shape[0], status=status)
    return "\n".join(lines + ["values"] + _rows(d)) + "\n"


def parse_metric(text: str) -> tuple[np.ndarray, str]:
    fields, blocks = _parse(text, "state-metric")
    n = int(fields["n_states"])
    return np.array(blocks["values"], dtype=float).reshape(n, n), fields.get("status", "converged")


def format_pairs(pairs: BisimilarPairSet) -> str:
    lines = _header("bisimilar-pairs", n_states=len(pairs.origin))
    lines.append("origin " + " ".join(str(int(o)) for o in pairs.origin))
    lines.append("pairs")
    lines += [f"{i} {j}" for i, j in pairs.pairs]
    return "\n".join(lines) + "\n"


def parse_pairs(text: str) -> BisimilarPairSet:
    fields, blocks = _parse(text, "bisimilar-pairs")
    origin = fields["origin"]
    origin = [origin] if isinstance(origin, str) else origin
    return BisimilarPairSet([tuple(int(v) for v in row) for row in blocks.get("pairs", [])],
                            np.array([int(o) for o in origin]))


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _csv_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else fmt(v)
    return v


def to_csv(header, rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_value(v) for v in row])
    return buf.getvalue()


def reports_to_csv(reports) -> str:
    return to_csv(REPORT_COLUMNS, ([r.as_row()[c] for c in REPORT_COLUMNS] for r in reports))


def reports_to_json(reports) -> str:
    return dumps([r.as_dict() for r in reports])


def history_to_csv(history) -> str:
    return to_csv(HISTORY_COLUMNS, history.rows())


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, non-finite floats as strings)."""

    def clean(x):
        if isinstance(x, dict):
            return {str(k): clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, float)):
            x = float(x)
            return x if math.isfinite(x) else str(x)
        if isinstance(x, np.integer):
            return int(x)
        if isinstance(x, np.bool_):
            return bool(x)
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def format_separable(params) -> str:
    lines = _header("separable-distance", state_dim=params.weights.shape[0])
    lines.append("powers " + " ".join(fmt(p) for p in params.powers))
    return "\n".join(lines + ["weights"] + _rows(params.weights)) + "\n"


def parse_separable(text: str):
    from bisimlab.learner import SeparableDistanceParams

    fields, blocks = _parse(text, "separable-distance")
    powers = fields["powers"]
    powers = [powers] if isinstance(powers, str) else powers
    return SeparableDistanceParams(np.array(blocks["weights"], dtype=float), tuple(float(p) for p in powers))
