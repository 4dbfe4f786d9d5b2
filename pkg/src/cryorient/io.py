"""CSV tables for orientations, pairs, training history, schedules and reports.

Floats are written with 9 significant digits so files are byte-stable for
identical inputs.
"""
import csv

import numpy as np

from .errors import InvalidArgument

ORIENT_COLUMNS = ("index", "qw", "qx", "qy", "qz", "shift_x", "shift_y")


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_table(path):
    """Return ``(header, columns)`` with columns as a dict of string lists."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: empty table")
    header = rows[0]
    cols = {h: [r[i] for r in rows[1:]] for i, h in enumerate(header)}
    return header, cols


def _floats(col):
    return np.array([float(v) if v != "" else np.nan for v in col])


def write_orientations(path, quats, shifts=None, extra=None):
    """Orientation sidecar: ``index,qw,qx,qy,qz,shift_x,shift_y`` plus optional extra columns."""
    quats = np.atleast_2d(quats)
    n = len(quats)
    shifts = np.zeros((n, 2)) if shifts is None else np.asarray(shifts)
    extra = extra or {}
    header = list(ORIENT_COLUMNS) + list(extra)
    rows = []
    for i in range(n):
        row = [i, *quats[i], *shifts[i]]
        row += [np.asarray(v)[i] for v in extra.values()]
        rows.append(row)
    write_table(path, header, rows)


def read_orientations(path):
    """Return ``(quats, shifts, extra)``; ``extra`` maps remaining column names to arrays."""
    header, cols = read_table(path)
    missing = [c for c in ORIENT_COLUMNS if c not in cols]
    if missing:
        raise InvalidArgument(f"{path}: missing columns {missing}")
    quats = np.column_stack([_floats(cols[c]) for c in ("qw", "qx", "qy", "qz")])
    shifts = np.column_stack([_floats(cols["shift_x"]), _floats(cols["shift_y"])])
    extra = {}
    for c in header:
        if c in ORIENT_COLUMNS:
            continue
        try:
            extra[c] = _floats(cols[c])
        except ValueError:
            extra[c] = np.array(cols[c])
    return quats, shifts, extra


def write_pairs(path, pairs, bins=None):
    pairs = np.asarray(pairs)
    bins = np.full(len(pairs), -1) if bins is None else np.asarray(bins)
    write_table(path, ("i", "j", "distance_bin"), [(int(a), int(b), int(c)) for (a, b), c in zip(pairs, bins)])


def read_pairs(path):
    _, cols = read_table(path)
    pairs = np.column_stack([np.array(cols["i"], dtype=np.int64), np.array(cols["j"], dtype=np.int64)])
    return pairs, np.array(cols["distance_bin"], dtype=np.int64)


def write_history(path, history):
    from .nn.train import HISTORY_FIELDS
    write_table(path, HISTORY_FIELDS, [[r[k] for k in HISTORY_FIELDS] for r in history.rows])


def write_schedule(path, rows):
    write_table(path, ("step", "lr", "momentum", "beta1", "beta2"), rows)


def write_fsc(path, curve):
    write_table(path, ("shell", "frequency", "fsc"),
                [(i, f, v) for i, (f, v) in enumerate(zip(curve.radii, curve.values))])
