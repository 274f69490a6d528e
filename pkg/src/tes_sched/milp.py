"""Dense simplex LP solver and best-bound branch-and-bound for binary MILPs."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

_PIVOT_TOL = 1e-9


@dataclass
class LinearProgram:
    """min c @ x  s.t.  row_lower <= A @ x <= row_upper,  lower <= x <= upper."""

    c: np.ndarray
    A: np.ndarray
    row_lower: np.ndarray
    row_upper: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.row_lower = np.broadcast_to(np.asarray(self.row_lower, dtype=float), (m,)).copy()
        self.row_upper = np.broadcast_to(np.asarray(self.row_upper, dtype=float), (m,)).copy()
        self.lower = (np.zeros(n) if self.lower is None
                      else np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy())
        self.upper = (np.full(n, np.inf) if self.upper is None
                      else np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy())
        if np.any(self.row_lower > self.row_upper) or np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.row_lower, self.row_upper, lower, upper)

    def max_violation(self, x: np.ndarray) -> float:
        ax = self.A @ x
        v = [0.0]
        if self.n_rows:
            v.append(float(np.max(self.row_lower - ax)))
            v.append(float(np.max(ax - self.row_upper)))
        v.append(float(np.max(self.lower - x)))
        v.append(float(np.max(x - self.upper)))
        return max(v)


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    binaries: Sequence[int]
    at_least_one: list = field(default_factory=list)
    at_most_one: list = field(default_factory=list)
    names: Optional[Sequence[str]] = None
    # reported objective = objective_scale * c @ x + objective_offset
    objective_scale: float = 1.0
    objective_offset: float = 0.0

    def __post_init__(self):
        self.binaries = tuple(int(b) for b in self.binaries)
        n = self.lp.n_vars
        if any(not 0 <= b < n for b in self.binaries):
            raise ValueError("binary index out of range")
        bset = set(self.binaries)
        self.at_least_one = [tuple(cl) for cl in self.at_least_one]
        self.at_most_one = [tuple(cl) for cl in self.at_most_one]
        for cl in self.at_least_one + self.at_most_one:
            if not set(cl) <= bset:
                raise ValueError("clauses may only reference binary variables")

    def clause_rows(self) -> LinearProgram:
        """The LP relaxation with clauses appended as linear rows and binaries in [0, 1]."""
        lp = self.lp
        n = lp.n_vars
        rows, lo, hi = [], [], []
        for cl in self.at_least_one:
            r = np.zeros(n)
            r[list(cl)] = 1.0
            rows.append(r), lo.append(1.0), hi.append(np.inf)
        for cl in self.at_most_one:
            r = np.zeros(n)
            r[list(cl)] = 1.0
            rows.append(r), lo.append(-np.inf), hi.append(1.0)
        A = np.vstack([lp.A] + rows) if rows else lp.A
        lower, upper = lp.lower.copy(), lp.upper.copy()
        b = list(self.binaries)
        lower[b] = np.maximum(lower[b], 0.0)
        upper[b] = np.minimum(upper[b], 1.0)
        return LinearProgram(lp.c, A, np.concatenate([lp.row_lower, lo]),
                             np.concatenate([lp.row_upper, hi]), lower, upper)


@dataclass
class Solution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    nodes: int = 0
    iterations: int = 0
    bound_history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------- LP


def _standard_form(lp: LinearProgram):
    """Rewrite as  A_s y (<=, >=, =) b,  y >= 0  and return the back-map."""
    n = lp.n_vars
    shift = np.zeros(n)
    cols = []  # (original index, sign)
    ub_rows = []  # (column position, bound)
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            shift[j] = lo
        elif math.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    T = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s
    A = lp.A @ T if lp.n_rows else np.zeros((0, len(cols)))
    off = lp.A @ shift if lp.n_rows else np.zeros(0)
    rows, rhs, sense = [], [], []
    for i in range(lp.n_rows):
        lo, hi = lp.row_lower[i] - off[i], lp.row_upper[i] - off[i]
        if lo == hi:
            rows.append(A[i]), rhs.append(hi), sense.append(0)
            continue
        if math.isfinite(hi):
            rows.append(A[i]), rhs.append(hi), sense.append(1)
        if math.isfinite(lo):
            rows.append(A[i]), rhs.append(lo), sense.append(-1)
    for k, bound in ub_rows:
        r = np.zeros(len(cols))
        r[k] = 1.0
        rows.append(r), rhs.append(bound), sense.append(1)
    A_s = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return A_s, np.array(rhs, dtype=float), np.array(sense, dtype=int), T, shift


def _pivot(tab: np.ndarray, r: int, c: int) -> None:
    tab[r] /= tab[r, c]
    col = tab[:, c].copy()
    col[r] = 0.0
    tab -= np.outer(col, tab[r])


def _iterate(tab: np.ndarray, basis: np.ndarray, n_cols: int, tol: float, max_iter: int):
    """Primal simplex on a tableau whose last row holds reduced costs."""
    m = tab.shape[0] - 1
    bland = False
    for it in range(max_iter):
        d = tab[-1, :n_cols]
        if bland:
            cand = np.flatnonzero(d < -tol)
            if cand.size == 0:
                return OPTIMAL, it
            c = int(cand[0])
        else:
            c = int(np.argmin(d))
            if d[c] >= -tol:
                return OPTIMAL, it
        col = tab[:m, c]
        mask = col > _PIVOT_TOL
        if not mask.any():
            return UNBOUNDED, it
        rhs = np.maximum(tab[:m, -1], 0.0)
        ratios = np.full(m, np.inf)
        ratios[mask] = rhs[mask] / col[mask]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + 1e-12 * max(1.0, rmin))
        r = int(ties[np.argmin(basis[ties])])
        bland = rmin <= 1e-12
        _pivot(tab, r, c)
        basis[r] = c
    return ITERATION_LIMIT, max_iter


def solve_lp(lp: LinearProgram, tol: float = 1e-7, max_iter: Optional[int] = None) -> Solution:
    """Two-phase tableau simplex.

    Dantzig pricing, switching to Bland's rule while pivots are degenerate.
    """
    A, b, sense, T, shift = _standard_form(lp)
    m, ny = A.shape
    if max_iter is None:
        max_iter = 50 * (m + ny + 10)
    # equilibrate rows
    scale = np.max(np.abs(A), axis=1) if ny else np.ones(m)
    scale[scale == 0] = 1.0
    A = A / scale[:, None]
    b = b / scale
    slack_cols = [i for i in range(m) if sense[i] != 0]
    ns = len(slack_cols)
    S = np.zeros((m, ns))
    for k, i in enumerate(slack_cols):
        S[i, k] = float(sense[i])
    M = np.hstack([A, S])
    flip = b < 0
    M[flip] *= -1.0
    b = np.where(flip, -b, b)
    # zero rows must be satisfiable
    basis = np.full(m, -1)
    for k, i in enumerate(slack_cols):
        if M[i, ny + k] == 1.0:
            basis[i] = ny + k
    art_rows = np.flatnonzero(basis < 0)
    na = art_rows.size
    n_struct = ny + ns
    tab = np.zeros((m + 1, n_struct + na + 1))
    tab[:m, :n_struct] = M
    tab[:m, -1] = b
    for k, i in enumerate(art_rows):
        tab[i, n_struct + k] = 1.0
        basis[i] = n_struct + k
    iters = 0
    if na:
        tab[-1, :n_struct] = -M[art_rows].sum(axis=0)
        tab[-1, -1] = -b[art_rows].sum()
        status, it = _iterate(tab, basis, n_struct + na, tol, max_iter)
        iters += it
        if status == ITERATION_LIMIT:
            return Solution(ITERATION_LIMIT, iterations=iters)
        if -tab[-1, -1] > tol * (1.0 + float(np.max(b, initial=0.0))):
            return Solution(INFEASIBLE, iterations=iters)
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n_struct:
                cand = np.flatnonzero(np.abs(tab[r, :n_struct]) > _PIVOT_TOL)
                if cand.size:
                    c = int(cand[0])
                    _pivot(tab, r, c)
                    basis[r] = c
                else:
                    keep[r] = False  # redundant row
        rows = np.concatenate([np.flatnonzero(keep), [m]])
        tab = tab[rows][:, list(range(n_struct)) + [-1]]
        basis = basis[keep]
        M, b = M[keep], b[keep]
        m = int(keep.sum())
    # phase II
    cs = np.concatenate([T.T @ lp.c, np.zeros(ns)])
    cscale = float(np.max(np.abs(cs))) if cs.size else 0.0
    if cscale == 0.0:
        cscale = 1.0
    cs = cs / cscale
    tab[-1, :n_struct] = cs - cs[basis] @ tab[:m, :n_struct]
    tab[-1, -1] = -cs[basis] @ tab[:m, -1]
    status, it = _iterate(tab, basis, n_struct, tol, max_iter)
    iters += it
    if status != OPTIMAL:
        return Solution(status, iterations=iters)
    xs = np.zeros(n_struct)
    xs[basis] = tab[:m, -1]
    if m:
        # refine the basic solution against the untouched rows
        try:
            refined = np.linalg.solve(M[:, basis], b)
            if np.all(refined >= -tol):
                xs[basis] = refined
        except np.linalg.LinAlgError:
            pass
    xs = np.maximum(xs, 0.0)
    x = shift + T @ xs[:ny]
    return Solution(OPTIMAL, x, float(lp.c @ x), nodes=1, iterations=iters)


# --------------------------------------------------------------------------- B&B


def propagate(mip: MixedIntegerProgram, fixed: dict) -> Optional[dict]:
    """Clause propagation on 0/1 fixings; ``None`` when a clause is violated."""
    fixed = dict(fixed)
    changed = True
    while changed:
        changed = False
        for cl in mip.at_most_one:
            ones = [v for v in cl if fixed.get(v) == 1]
            if len(ones) > 1:
                return None
            if ones:
                for v in cl:
                    if v != ones[0] and v not in fixed:
                        fixed[v] = 0
                        changed = True
        for cl in mip.at_least_one:
            if any(fixed.get(v) == 1 for v in cl):
                continue
            free = [v for v in cl if v not in fixed]
            if not free:
                return None
            if len(free) == 1:
                fixed[free[0]] = 1
                changed = True
    return fixed


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    fixed: dict = field(compare=False)


def branch_and_bound(mip: MixedIntegerProgram, tol: float = 1e-7, int_tol: float = 1e-6,
                     node_limit: int = 100000, executor=None, batch: int = 1) -> Solution:
    """Best-bound branch-and-bound over the binary variables.

    Branches on the most fractional binary (lowest index on ties) and breaks
    bound ties by node id.  ``batch`` nodes are popped per round; their LPs
    may be solved through ``executor.map`` and are merged in node-id order,
    so the result does not depend on the executor.
    """
    relax = mip.clause_rows()
    bins = np.array(mip.binaries, dtype=int)
    base_lo, base_hi = relax.lower, relax.upper

    def solve(node: _Node) -> Solution:
        lo, hi = base_lo.copy(), base_hi.copy()
        for v, val in node.fixed.items():
            lo[v] = hi[v] = float(val)
        return solve_lp(relax.with_bounds(lo, hi), tol)

    root = propagate(mip, {})
    if root is None:
        return Solution(INFEASIBLE)
    heap = [_Node(-math.inf, 0, root)]
    next_id = 1
    incumbent: Optional[np.ndarray] = None
    best = math.inf
    nodes = 0
    history = []
    lp_iters = 0
    saw_unbounded = False

    def cutoff() -> float:
        return best - tol * max(1.0, abs(best)) if math.isfinite(best) else math.inf

    status = None
    while heap:
        history.append(heap[0].bound)
        if nodes >= node_limit:
            status = ITERATION_LIMIT
            break
        take = []
        while heap and len(take) < max(1, batch):
            node = heapq.heappop(heap)
            if node.bound < cutoff():
                take.append(node)
        if not take:
            continue
        mapper = executor.map if executor is not None else map
        for node, sol in zip(take, list(mapper(solve, take))):
            nodes += 1
            lp_iters += sol.iterations
            if sol.status == UNBOUNDED:
                saw_unbounded = True
                continue
            if not sol.ok or sol.objective >= cutoff():
                continue
            frac = np.abs(sol.x[bins] - np.round(sol.x[bins]))
            if frac.size == 0 or frac.max() <= int_tol:
                x = sol.x.copy()
                x[bins] = np.round(x[bins])
                incumbent = x
                best = float(mip.lp.c @ x)
                continue
            # most fractional, lowest index first
            v = int(bins[int(np.argmax(np.round(frac, 12)))])
            for val in (0, 1):
                child = propagate(mip, {**node.fixed, v: val})
                if child is not None:
                    heapq.heappush(heap, _Node(sol.objective, next_id, child))
                    next_id += 1
    if status is None:
        if incumbent is not None:
            status = OPTIMAL
        else:
            status = UNBOUNDED if saw_unbounded else INFEASIBLE
    if incumbent is None:
        return Solution(status, nodes=nodes, iterations=lp_iters, bound_history=history)
    return Solution(status, incumbent, best, nodes, lp_iters, history)


# --------------------------------------------------------------------------- debug dump


def _fmt_terms(coefs: np.ndarray, names: Sequence[str]) -> str:
    parts = []
    for j in np.flatnonzero(coefs):
        c = coefs[j]
        parts.append(f"{'-' if c < 0 else '+'} {abs(c):.17g} {names[j]}")
    return " ".join(parts) if parts else "0 " + names[0]


def write_lp(mip: MixedIntegerProgram, path) -> Path:
    """Dump the instance in CPLEX-LP-like text for cross-checking with other solvers."""
    lp = mip.lp
    names = list(mip.names) if mip.names else [f"x{j}" for j in range(lp.n_vars)]
    lines = ["\\ tes-sched MIP instance", "Minimize", " obj: " + _fmt_terms(lp.c, names),
             "Subject To"]
    for i in range(lp.n_rows):
        expr = _fmt_terms(lp.A[i], names)
        lo, hi = lp.row_lower[i], lp.row_upper[i]
        if lo == hi:
            lines.append(f" r{i}: {expr} = {hi:.17g}")
            continue
        if math.isfinite(hi):
            lines.append(f" r{i}_u: {expr} <= {hi:.17g}")
        if math.isfinite(lo):
            lines.append(f" r{i}_l: {expr} >= {lo:.17g}")
    for k, cl in enumerate(mip.at_least_one):
        lines.append(f" alo{k}: " + " + ".join(names[v] for v in cl) + " >= 1")
    for k, cl in enumerate(mip.at_most_one):
        lines.append(f" amo{k}: " + " + ".join(names[v] for v in cl) + " <= 1")
    lines.append("Bounds")
    bset = set(mip.binaries)
    for j in range(lp.n_vars):
        if j in bset:
            continue
        lo = "-inf" if not math.isfinite(lp.lower[j]) else f"{lp.lower[j]:.17g}"
        hi = "+inf" if not math.isfinite(lp.upper[j]) else f"{lp.upper[j]:.17g}"
        lines.append(f" {lo} <= {names[j]} <= {hi}")
    lines.append("Binaries")
    lines.append(" " + " ".join(names[v] for v in mip.binaries))
    lines.append("End")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
