"""CSV and JSON writers. Floats are written with ``repr`` so files are exact
and reproducible byte for byte."""

import csv
import json
from pathlib import Path

import numpy as np


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return x


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.reader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


def write_rho_csv(path, solution):
    M = solution.rho.shape[1]
    header = ["t"] + [f"rho_{a}" for a in range(1, M + 1)]
    rows = ([t] + row.tolist() for t, row in zip(solution.time_mesh, solution.rho))
    return write_csv(path, header, rows)


def write_scalar_csv(path, times, mu, theta2):
    return write_csv(path, ["t", "mu_f", "theta2_f"], zip(times, mu, theta2))


def write_trajectories_csv(path, result):
    """Rows (replica, t, observable_name, value); observables are mu[f] and v[f]."""
    rows = []
    for pos, replica in enumerate(result.replicas):
        for kind, table in (("mu", result.mu), ("v", result.v)):
            for name in sorted(table):
                for col, t in enumerate(result.record_times):
                    rows.append((int(replica), t, f"{kind}[{name}]", table[name][pos, col]))
        for (name, r), times in sorted(result.hitting.items()):
            rows.append((int(replica), "", f"hit[{name}>={r!r}]", times[pos]))
    return write_csv(path, ["replica", "t", "observable_name", "value"], rows)


def write_events_csv(path, events):
    """Urn indices are written 1-based."""
    rows = ((e.time, e.source + 1, e.dest + 1, e.offspring, e.kind) for e in events)
    return write_csv(path, ["time", "source", "dest", "k", "kind"], rows)


def write_moments_csv(mean_path, cov_path, states):
    mean_rows, cov_rows = [], []
    for st in states:
        cov = st.cov
        for i in range(st.n_urns):
            mean_rows.append((st.time, i + 1, st.mean[i]))
            for j in range(i, st.n_urns):
                cov_rows.append((st.time, i + 1, j + 1, cov[i, j]))
    write_csv(mean_path, ["t", "i", "mean_i"], mean_rows)
    write_csv(cov_path, ["t", "i", "j", "cov_ij"], cov_rows)
