"""Fixed-format MPS writer and reader.

Names occupy the classic 8-character fields. Numbers are written with
``repr`` so a round trip is coefficient-exact; a value may therefore run past
column 36, which every whitespace-tokenizing reader (HiGHS, CPLEX, Gurobi,
this module) accepts.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .problem import INF, LpProblem

OBJ_ROW = "COST"


def _names(given, prefix: str, count: int) -> list[str]:
    if given is not None and len(given) == count and all(
        0 < len(s) <= 8 and " " not in s for s in given
    ) and len(set(given)) == count and OBJ_ROW not in given:
        return list(given)
    if count >= 10**7:
        raise ValueError("fixed-format MPS names cap the problem at 9,999,999 entries")
    return [f"{prefix}{i:07d}" for i in range(count)]


def _line(f1: str, f2: str, f3: str = "", f4: str = "") -> str:
    # field columns: 2-3, 5-12, 15-22, 25-
    head = f" {f1:<2} {f2:<8}"
    if not f3:
        return head.rstrip()
    return f"{head}  {f3:<8}  {f4}".rstrip()


def _num(v: float) -> str:
    return repr(float(v))


def export_mps(problem: LpProblem, path) -> None:
    """Write ``problem`` to ``path`` in fixed-format MPS (binaries as BV bounds)."""
    cols = _names(problem.var_names, "C", problem.n_vars)
    rows = _names(problem.row_names, "R", problem.n_rows)
    senses = problem.senses()
    lo, up = problem.row_lower, problem.row_upper

    out = [f"NAME          {problem.name[:8] or 'PROBLEM'}", "ROWS", _line("N", OBJ_ROW)]
    row_kind = []
    for name, s in zip(rows, senses):
        kind = {"E": "E", "L": "L", "G": "G", "N": "N", "R": "G"}[s]
        row_kind.append(kind)
        out.append(_line(kind, name))

    out.append("COLUMNS")
    csc = sp.csc_matrix(problem.A)
    for j, cname in enumerate(cols):
        c = problem.objective[j]
        if c != 0:
            out.append(_line("", cname, OBJ_ROW, _num(c)))
        for p in range(csc.indptr[j], csc.indptr[j + 1]):
            v = csc.data[p]
            if v != 0:
                out.append(_line("", cname, rows[csc.indices[p]], _num(v)))
        if c == 0 and csc.indptr[j] == csc.indptr[j + 1]:
            # keep empty columns declared
            out.append(_line("", cname, OBJ_ROW, "0.0"))

    out.append("RHS")
    if problem.objective_offset != 0:
        out.append(_line("", "RHS", OBJ_ROW, _num(-problem.objective_offset)))
    for i, (name, kind) in enumerate(zip(rows, row_kind)):
        rhs = {"E": lo[i], "L": up[i], "G": lo[i], "N": 0.0}[kind]
        if rhs != 0:
            out.append(_line("", "RHS", name, _num(rhs)))

    ranged = np.flatnonzero(senses == "R")
    if ranged.size:
        out.append("RANGES")
        for i in ranged:
            out.append(_line("", "RNG", rows[i], _num(up[i] - lo[i])))

    out.append("BOUNDS")
    binary = problem.integrality if problem.integrality is not None else np.zeros(problem.n_vars, bool)
    for j, cname in enumerate(cols):
        l, u = problem.lower[j], problem.upper[j]
        if binary[j] and l == 0 and u == 1:
            out.append(_line("BV", "BND", cname))
            continue
        if l == u:
            out.append(_line("FX", "BND", cname, _num(l)))
            continue
        if np.isneginf(l) and np.isposinf(u):
            out.append(_line("FR", "BND", cname))
            continue
        if np.isneginf(l):
            out.append(_line("MI", "BND", cname))
        elif l != 0 or u < 0:
            out.append(_line("LO", "BND", cname, _num(l)))
        if np.isfinite(u):
            out.append(_line("UP", "BND", cname, _num(u)))
    out.append("ENDATA")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def read_mps(path) -> LpProblem:
    """Read an MPS file (fixed or free spacing) written by :func:`export_mps` or similar."""
    section = None
    obj_row = None
    row_order: list[str] = []
    row_kind: dict[str, str] = {}
    col_index: dict[str, int] = {}
    entries: list[tuple[int, int, float]] = []
    objective: dict[int, float] = defaultdict(float)
    rhs: dict[str, float] = {}
    ranges: dict[str, float] = {}
    bounds: dict[int, list] = {}
    binaries: set[int] = set()
    integer_block = False
    offset = 0.0
    name = "PROBLEM"

    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            parts = raw.split()
            section = parts[0]
            if section == "NAME" and len(parts) > 1:
                name = parts[1]
            if section == "ENDATA":
                break
            continue
        parts = raw.split()
        if section == "ROWS":
            kind, rname = parts
            if kind == "N" and obj_row is None:
                obj_row = rname
            else:
                row_kind[rname] = kind
                row_order.append(rname)
        elif section == "COLUMNS":
            if len(parts) >= 3 and parts[1] == "'MARKER'":
                integer_block = parts[2] == "'INTORG'"
                continue
            cname = parts[0]
            j = col_index.setdefault(cname, len(col_index))
            if integer_block:
                binaries.add(j)
            for k in range(1, len(parts) - 1, 2):
                rname, val = parts[k], float(parts[k + 1])
                if rname == obj_row:
                    objective[j] += val
                elif row_kind.get(rname) != "N":
                    entries.append((rname, j, val))
        elif section == "RHS":
            items = parts[1:] if len(parts) % 2 == 1 else parts
            for k in range(0, len(items) - 1, 2):
                rname, val = items[k], float(items[k + 1])
                if rname == obj_row:
                    offset = -val
                else:
                    rhs[rname] = val
        elif section == "RANGES":
            items = parts[1:] if len(parts) % 2 == 1 else parts
            for k in range(0, len(items) - 1, 2):
                ranges[items[k]] = float(items[k + 1])
        elif section == "BOUNDS":
            kind, cname = parts[0], parts[2]
            j = col_index[cname]
            b = bounds.setdefault(j, [0.0, INF])
            val = float(parts[3]) if len(parts) > 3 else None
            if kind == "UP":
                b[1] = val
            elif kind == "LO":
                b[0] = val
            elif kind == "FX":
                b[0] = b[1] = val
            elif kind == "FR":
                b[0], b[1] = -INF, INF
            elif kind == "MI":
                b[0] = -INF
            elif kind == "PL":
                b[1] = INF
            elif kind == "BV":
                b[0], b[1] = 0.0, 1.0
                binaries.add(j)
            else:
                raise ValueError(f"unsupported bound type {kind}")

    rows = [r for r in row_order if row_kind[r] != "N"]
    row_pos = {r: i for i, r in enumerate(rows)}
    n, m = len(col_index), len(rows)
    if entries:
        r_idx = np.array([row_pos[e[0]] for e in entries])
        c_idx = np.array([e[1] for e in entries])
        vals = np.array([e[2] for e in entries])
        A = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(m, n))
    else:
        A = sp.csr_matrix((m, n))

    row_lower = np.empty(m)
    row_upper = np.empty(m)
    for i, r in enumerate(rows):
        kind, b = row_kind[r], rhs.get(r, 0.0)
        lo, up = {"E": (b, b), "L": (-INF, b), "G": (b, INF)}[kind]
        if r in ranges:
            R = ranges[r]
            if kind == "G":
                up = b + abs(R)
            elif kind == "L":
                lo = b - abs(R)
            elif R >= 0:
                up = b + R
            else:
                lo = b + R
        row_lower[i], row_upper[i] = lo, up

    c = np.zeros(n)
    for j, v in objective.items():
        c[j] = v
    lower = np.zeros(n)
    upper = np.full(n, INF)
    for j, (lo_b, up_b) in bounds.items():
        lower[j], upper[j] = lo_b, up_b
    integrality = np.zeros(n, bool)
    integrality[list(binaries)] = True
    var_names = [None] * n
    for cname, j in col_index.items():
        var_names[j] = cname
    return LpProblem(c, A, row_lower, row_upper, lower, upper,
                     integrality=integrality if binaries else None,
                     var_names=var_names, row_names=rows, name=name, objective_offset=offset)
