"""Solver adapters behind the :class:`ConicProblem` interface.

``clarabel`` (default) handles second-order and exponential cones. ``cvxopt``
is kept as an independent cross-check for SOC-only problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .problem import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED, ConicProblem,
                      ConicSolution)


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    gap: float = 1e-8
    max_iter: int = 200
    # post-solve acceptance threshold on the residual, relative to 1 + max|x|
    check: float = 1e-7

    def accepts(self, residual: float, x) -> bool:
        return residual <= self.check * (1.0 + float(np.max(np.abs(x), initial=0.0)))


def _selector(n, blocks):
    """``-I`` rows picking the variables of every cone block, in order."""
    cols = np.fromiter((i for blk in blocks for i in blk), dtype=int)
    m = len(cols)
    return sp.csr_matrix((-np.ones(m), (np.arange(m), cols)), shape=(m, n))


def _stack_rows(prob: ConicProblem):
    """Rows for ``A x + s = b`` split into (zero, nonneg, soc, exp) parts."""
    n = prob.n
    fin_lb = np.flatnonzero(np.isfinite(prob.lb))
    fin_ub = np.flatnonzero(np.isfinite(prob.ub))
    bounds = sp.csr_matrix(
        (np.concatenate([-np.ones(len(fin_lb)), np.ones(len(fin_ub))]),
         (np.arange(len(fin_lb) + len(fin_ub)), np.concatenate([fin_lb, fin_ub]))),
        shape=(len(fin_lb) + len(fin_ub), n))
    nonneg_A = sp.vstack([prob.A_ineq, bounds], format="csr")
    nonneg_b = np.concatenate([prob.b_ineq, -prob.lb[fin_lb], prob.ub[fin_ub]])
    return nonneg_A, nonneg_b, _selector(n, prob.soc), _selector(n, prob.exp)


class ClarabelBackend:
    name = "clarabel"
    supports_exp = True

    def solve(self, prob: ConicProblem, tol: Tolerances) -> ConicSolution:
        import clarabel

        nonneg_A, nonneg_b, soc_A, exp_A = _stack_rows(prob)
        A = sp.vstack([prob.A_eq, nonneg_A, soc_A, exp_A], format="csc")
        b = np.concatenate([prob.b_eq, nonneg_b, np.zeros(soc_A.shape[0] + exp_A.shape[0])])
        cones = []
        if prob.A_eq.shape[0]:
            cones.append(clarabel.ZeroConeT(prob.A_eq.shape[0]))
        if nonneg_A.shape[0]:
            cones.append(clarabel.NonnegativeConeT(nonneg_A.shape[0]))
        cones += [clarabel.SecondOrderConeT(len(blk)) for blk in prob.soc]
        cones += [clarabel.ExponentialConeT() for _ in prob.exp]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol.feas
        settings.tol_gap_abs = tol.gap
        settings.tol_gap_rel = tol.gap
        settings.max_iter = tol.max_iter
        P = sp.csc_matrix((prob.n, prob.n))
        res = clarabel.DefaultSolver(P, prob.c, A, b, cones, settings).solve()
        status = str(res.status)
        if status in ("Solved", "AlmostSolved"):
            x = np.asarray(res.x)
            r = prob.residual(x)
            if tol.accepts(r, x):
                return ConicSolution(OPTIMAL, x, prob.objective(x), res.iterations, r, self.name, status)
            return ConicSolution(NUMERICAL_FAILURE, x, prob.objective(x), res.iterations, r, self.name,
                                 f"{status} but residual {r:.3g}")
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return ConicSolution(INFEASIBLE, None, np.inf, res.iterations, backend=self.name, detail=status)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return ConicSolution(UNBOUNDED, None, -np.inf, res.iterations, backend=self.name, detail=status)
        return ConicSolution(NUMERICAL_FAILURE, None, np.nan, res.iterations, backend=self.name,
                             detail=status)


class CvxoptBackend:
    name = "cvxopt"
    supports_exp = False

    def solve(self, prob: ConicProblem, tol: Tolerances) -> ConicSolution:
        import cvxopt
        from cvxopt import solvers

        if prob.exp:
            raise NotImplementedError("cvxopt backend has no exponential cone")
        nonneg_A, nonneg_b, soc_A, _ = _stack_rows(prob)
        G = sp.vstack([nonneg_A, soc_A], format="coo")
        h = np.concatenate([nonneg_b, np.zeros(soc_A.shape[0])])

        def spm(m):
            m = m.tocoo()
            return cvxopt.spmatrix(m.data.tolist(), m.row.tolist(), m.col.tolist(), size=m.shape)

        dims = {"l": nonneg_A.shape[0], "q": [len(blk) for blk in prob.soc], "s": []}
        kw = {}
        if prob.A_eq.shape[0]:
            kw = {"A": spm(prob.A_eq), "b": cvxopt.matrix(prob.b_eq)}
        opts = {"show_progress": False, "abstol": tol.gap, "reltol": tol.gap,
                "feastol": tol.feas, "maxiters": tol.max_iter}
        try:
            res = solvers.conelp(cvxopt.matrix(prob.c), spm(G), cvxopt.matrix(h), dims,
                                 options=opts, **kw)
        except (ValueError, ArithmeticError) as exc:
            return ConicSolution(NUMERICAL_FAILURE, None, np.nan, backend=self.name, detail=str(exc))
        status = res["status"]
        if status == "optimal" or (status == "unknown" and res["x"] is not None):
            x = np.asarray(res["x"]).ravel()
            r = prob.residual(x)
            if tol.accepts(r, x):
                return ConicSolution(OPTIMAL, x, prob.objective(x), res["iterations"], r, self.name, status)
            return ConicSolution(NUMERICAL_FAILURE, x, prob.objective(x), res["iterations"], r,
                                 self.name, f"{status} residual {r:.3g}")
        if status == "primal infeasible":
            return ConicSolution(INFEASIBLE, None, np.inf, res["iterations"], backend=self.name)
        if status == "dual infeasible":
            return ConicSolution(UNBOUNDED, None, -np.inf, res["iterations"], backend=self.name)
        return ConicSolution(NUMERICAL_FAILURE, None, np.nan, backend=self.name, detail=status)


BACKENDS = {"clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}


def get_backend(backend=None):
    if backend is None:
        return ClarabelBackend()
    if isinstance(backend, str):
        try:
            return BACKENDS[backend]()
        except KeyError:
            raise ValueError(f"unknown conic backend {backend!r}") from None
    return backend


def solve(prob: ConicProblem, tol: Tolerances | None = None, backend=None) -> ConicSolution:
    """Solve ``prob``; never returns ``optimal`` for a point that fails the residual check."""
    return get_backend(backend).solve(prob, tol or Tolerances())
