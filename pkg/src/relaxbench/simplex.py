"""Dense two-phase simplex for problems ``min c.x  s.t.  A x = b,  l <= x <= u``.

Bounds are handled natively (nonbasic variables rest at either bound and may
bound-flip without a basis change), which keeps the tableau small for box-heavy
problems.  Pricing is Dantzig with an automatic switch to Bland's rule under
degeneracy, so the method terminates.  The final basis is refactorized from the
original data to wash out accumulated elimination error before the primal point
and the row multipliers are reported.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

__all__ = ["SimplexResult", "solve_canonical"]

_NB_LOWER = 0
_NB_UPPER = 1
_BASIC = 2
_NB_FREE = 3

_PIVOT_TOL = 1e-10
_DEGENERATE_STEP = 1e-11
_BLAND_TRIGGER = 30


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit | time_limit | numerical
    x: np.ndarray | None
    y: np.ndarray | None  # multipliers for the equality rows, c_B' B^-1
    reduced_costs: np.ndarray | None  # for the structural columns
    objective: float | None
    iterations: int


def solve_canonical(
    c,
    A,
    b,
    lower,
    upper,
    *,
    feas_tol: float = 1e-8,
    opt_tol: float = 1e-9,
    max_iters: int | None = None,
    time_limit: float | None = None,
) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = c.shape[0]
    m = A.shape[0] if A.size or A.ndim == 2 else 0
    if A.size == 0:
        A = A.reshape(m, n)
    if np.any(lower > upper):
        return SimplexResult("infeasible", None, None, None, None, 0)
    if max_iters is None:
        max_iters = 2000 + 60 * (m + n)
    deadline = None if time_limit is None else time.monotonic() + time_limit

    state = _State(c, A, b, lower, upper, opt_tol)
    status = state.run_phase1(feas_tol, max_iters, deadline)
    if status != "optimal":
        return SimplexResult(status, None, None, None, None, state.iterations)
    status = state.run_phase2(max_iters, deadline)
    if status != "optimal":
        return SimplexResult(status, None, None, None, None, state.iterations)
    return state.extract_solution()


class _State:
    def __init__(self, c, A, b, lower, upper, opt_tol):
        self.n = n = c.shape[0]
        self.m = m = A.shape[0]
        self.c = c
        self.b = b
        self.opt_tol = opt_tol
        self.iterations = 0

        # nonbasic starting point: prefer a finite lower bound, then a finite
        # upper bound; a doubly unbounded variable starts free at zero
        status = np.empty(n + m, dtype=np.int8)
        values = np.zeros(n + m)
        lo_fin = np.isfinite(lower)
        hi_fin = np.isfinite(upper)
        status[:n] = np.where(lo_fin, _NB_LOWER, np.where(hi_fin, _NB_UPPER, _NB_FREE))
        values[:n] = np.where(lo_fin, lower, np.where(hi_fin, upper, 0.0))

        resid = b - A @ values[:n]
        art_sign = np.where(resid >= 0.0, 1.0, -1.0)
        self.A_ext = np.hstack([A, np.diag(art_sign)]) if m else A.reshape(0, n)
        self.lower = np.concatenate([lower, np.zeros(m)])
        self.upper = np.concatenate([upper, np.full(m, np.inf)])
        self.art_sign = art_sign

        self.tableau = self.A_ext * art_sign[:, None] if m else self.A_ext.copy()
        self.basis = np.arange(n, n + m)
        status[n:] = _BASIC
        self.status = status
        self.values = values
        self.xB = np.abs(resid)
        self.banned = np.zeros(n + m, dtype=bool)

    # ------------------------------------------------------------------ phases

    def run_phase1(self, feas_tol, max_iters, deadline):
        if self.m == 0:
            return "optimal"
        cost = np.zeros(self.n + self.m)
        cost[self.n:] = 1.0
        status = self._iterate(cost, max_iters, deadline, phase=1)
        if status not in ("optimal",):
            return "numerical" if status == "unbounded" else status
        infeas = float(cost[self.basis] @ self.xB)
        if infeas > feas_tol * max(1.0, float(np.abs(self.b).max(initial=0.0))):
            return "infeasible"
        self._expel_artificials()
        # artificials are pinned at zero for phase 2
        self.lower[self.n:] = 0.0
        self.upper[self.n:] = 0.0
        self.banned[self.n:] = True
        return "optimal"

    def run_phase2(self, max_iters, deadline):
        cost = np.concatenate([self.c, np.zeros(self.m)])
        return self._iterate(cost, max_iters, deadline, phase=2)

    def _expel_artificials(self):
        """Pivot artificial variables out of the basis where possible."""
        for r in range(self.m):
            j_basic = self.basis[r]
            if j_basic < self.n:
                continue
            row = self.tableau[r, : self.n]
            candidates = np.flatnonzero(
                (np.abs(row) > _PIVOT_TOL) & (self.status[: self.n] != _BASIC)
            )
            if candidates.size == 0:
                continue  # redundant row; artificial stays basic at level zero
            j = int(candidates[np.argmax(np.abs(row[candidates]))])
            entering_value = self.values[j]
            self._pivot(r, j, entering_value)
            self.status[j_basic] = _NB_LOWER
            self.values[j_basic] = 0.0

    # ------------------------------------------------------------------ core

    def _iterate(self, cost, max_iters, deadline, phase):
        degenerate_streak = 0
        while True:
            if self.iterations >= max_iters:
                return "iteration_limit"
            if deadline is not None and self.iterations % 64 == 0:
                if time.monotonic() > deadline:
                    return "time_limit"

            reduced = cost - cost[self.basis] @ self.tableau
            j, direction = self._choose_entering(
                reduced, bland=degenerate_streak > _BLAND_TRIGGER
            )
            if j < 0:
                return "optimal"

            step, leave_row, hits_lower = self._ratio_test(j, direction)
            if not np.isfinite(step):
                return "unbounded" if phase == 2 else "numerical"

            self.iterations += 1
            column = self.tableau[:, j]
            if leave_row < 0:
                # the entering variable runs to its other bound: bound flip
                self.xB -= direction * step * column
                self.status[j] = _NB_UPPER if self.status[j] == _NB_LOWER else _NB_LOWER
                self.values[j] = (
                    self.upper[j] if self.status[j] == _NB_UPPER else self.lower[j]
                )
            else:
                entering_value = self.values[j] + direction * step
                leaving = self.basis[leave_row]
                self.xB -= direction * step * column
                self._pivot(leave_row, j, entering_value)
                if hits_lower:
                    self.status[leaving] = _NB_LOWER
                    self.values[leaving] = self.lower[leaving]
                else:
                    self.status[leaving] = _NB_UPPER
                    self.values[leaving] = self.upper[leaving]
                if leaving >= self.n:
                    self.banned[leaving] = True

            degenerate_streak = degenerate_streak + 1 if step <= _DEGENERATE_STEP else 0

    def _choose_entering(self, reduced, bland):
        tol = self.opt_tol
        movable = (self.upper - self.lower) > 0.0
        can_inc = (self.status == _NB_LOWER) & movable & (reduced < -tol)
        can_dec = (self.status == _NB_UPPER) & movable & (reduced > tol)
        free = self.status == _NB_FREE
        can_inc |= free & (reduced < -tol)
        can_dec |= free & (reduced > tol)
        eligible = (can_inc | can_dec) & ~self.banned
        idx = np.flatnonzero(eligible)
        if idx.size == 0:
            return -1, 0
        if bland:
            j = int(idx[0])
        else:
            j = int(idx[np.argmax(np.abs(reduced[idx]))])
        return j, (1 if can_inc[j] else -1)

    def _ratio_test(self, j, direction):
        """Largest step for entering column ``j`` moving in ``direction``.

        Returns (step, leaving_row, leaving_hits_lower); leaving_row is -1
        when the entering variable's own opposite bound is the binding limit.
        """
        delta = direction * self.tableau[:, j]
        basic_lo = self.lower[self.basis]
        basic_hi = self.upper[self.basis]

        with np.errstate(divide="ignore", invalid="ignore"):
            dec = delta > _PIVOT_TOL  # basic value decreases toward its lower bound
            inc = delta < -_PIVOT_TOL
            ratios = np.full(self.m, np.inf)
            ratios[dec] = (self.xB[dec] - basic_lo[dec]) / delta[dec]
            ratios[inc] = (self.xB[inc] - basic_hi[inc]) / delta[inc]
        ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))

        own = self.upper[j] - self.lower[j]
        if not np.isfinite(own):
            own = np.inf
        t_rows = float(ratios.min()) if self.m else np.inf

        if own < t_rows - 1e-12:
            return own, -1, False
        if not np.isfinite(t_rows):
            return (own, -1, False) if np.isfinite(own) else (np.inf, -1, False)

        # near-ties resolved toward the largest pivot magnitude for stability,
        # then the smallest row index for determinism
        tie = np.flatnonzero(ratios <= t_rows + 1e-9 * (1.0 + t_rows))
        pivots = np.abs(self.tableau[tie, j])
        best = tie[pivots >= pivots.max() * (1.0 - 1e-7)]
        r = int(best[0])
        return t_rows, r, delta[r] > 0.0

    def _pivot(self, r, j, entering_value):
        T = self.tableau
        piv = T[r, j]
        T[r, :] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r, :])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.status[j] = _BASIC
        self.xB[r] = entering_value

    # ------------------------------------------------------------------ output

    def extract_solution(self):
        cost = np.concatenate([self.c, np.zeros(self.m)])
        x_full = self.values.copy()
        x_full[self.basis] = self.xB
        y = None
        reduced = cost - cost[self.basis] @ self.tableau
        if self.m:
            B = self.A_ext[:, self.basis]
            try:
                rhs = self.b - self.A_ext @ np.where(self.status == _BASIC, 0.0, self.values)
                xB = np.linalg.solve(B, rhs)
                y = np.linalg.solve(B.T, cost[self.basis])
                x_full = self.values.copy()
                x_full[self.basis] = xB
                reduced = cost - y @ self.A_ext
            except np.linalg.LinAlgError:
                # fall back to the running tableau values
                binv = self.tableau[:, self.n:] * self.art_sign[None, :]
                y = cost[self.basis] @ binv
        else:
            y = np.zeros(0)
        x = x_full[: self.n]
        return SimplexResult(
            "optimal",
            x,
            y,
            reduced[: self.n],
            float(self.c @ x),
            self.iterations,
        )
