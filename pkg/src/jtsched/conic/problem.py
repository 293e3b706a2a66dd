"""Conic problem container and a small affine-expression builder.

Standard form::

    minimize    c @ x + offset
    subject to  A_eq @ x == b_eq
                A_ineq @ x <= b_ineq
                lb <= x <= ub
                ||x[tail]||_2 <= x[head]          for each (head, *tail) in soc
                x[j] * exp(x[i] / x[j]) <= x[k]   for each (i, j, k) in exp

Cones are stated over variable indices; the builder introduces auxiliary
variables tied to affine expressions by equality rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


class Affine:
    """Sparse affine expression ``sum coef_i * x_i + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def var(cls, i, coef=1.0):
        return cls({int(i): float(coef)})

    @classmethod
    def combo(cls, idx, coefs, const=0.0):
        terms = {}
        for i, c in zip(idx, coefs):
            if c != 0.0:
                terms[int(i)] = terms.get(int(i), 0.0) + float(c)
        return cls(terms, const)

    def copy(self):
        return Affine(self.terms, self.const)

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, Affine):
            for i, c in other.terms.items():
                out.terms[i] = out.terms.get(i, 0.0) + c
            out.const += other.const
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return Affine({i: -c for i, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        s = float(s)
        return Affine({i: c * s for i, c in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def value(self, x) -> float:
        return sum(c * x[i] for i, c in self.terms.items()) + self.const

    def is_plain_var(self):
        if self.const == 0.0 and len(self.terms) == 1:
            (i, c), = self.terms.items()
            if c == 1.0:
                return i
        return None


@dataclass(frozen=True)
class ConicProblem:
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ineq: sp.csr_matrix
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    soc: tuple = ()
    exp: tuple = ()
    offset: float = 0.0
    names: tuple = ()

    @property
    def n(self) -> int:
        return len(self.c)

    def check(self) -> None:
        """Raise ``ValueError`` if an index is out of range or a cone head is shared."""
        n = self.n
        for A, b in ((self.A_eq, self.b_eq), (self.A_ineq, self.b_ineq)):
            if A.shape != (len(b), n):
                raise ValueError("constraint matrix shape mismatch")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must have length n")
        heads = set()
        for block in self.soc:
            if len(block) < 1 or min(block) < 0 or max(block) >= n:
                raise ValueError(f"SOC block {block} out of range")
            if block[0] in heads:
                raise ValueError(f"variable {block[0]} heads more than one cone")
            heads.add(block[0])
        for block in self.exp:
            if len(block) != 3 or min(block) < 0 or max(block) >= n:
                raise ValueError(f"exponential block {block} malformed")

    def residual(self, x) -> float:
        """Largest absolute constraint violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        r = [0.0]
        if self.A_eq.shape[0]:
            r.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if self.A_ineq.shape[0]:
            r.append(np.max(self.A_ineq @ x - self.b_ineq))
        r.append(np.max(self.lb - x, initial=0.0))
        r.append(np.max(x - self.ub, initial=0.0))
        for block in self.soc:
            r.append(np.linalg.norm(x[list(block[1:])]) - x[block[0]])
        for i, j, k in self.exp:
            xi, yj, zk = x[i], x[j], x[k]
            if yj > 0:
                r.append(yj * np.exp(min(xi / yj, 700.0)) - zk)
            else:
                r.append(max(-yj, xi, -zk))
        return float(max(r))

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x) + self.offset)

    def dump(self, path) -> None:
        """Write the problem in a line-oriented sparse text format.

        Sections, each introduced by a header line::

            n <n>
            offset <float>
            c <i> <value>            (nonzeros only)
            eq <row> <col> <value>   / eqrhs <row> <value>
            le <row> <col> <value>   / lerhs <row> <value>
            bound <i> <lb> <ub>      (only non-default bounds; inf allowed)
            soc <head> <tail...>
            exp <i> <j> <k>
        """
        lines = [f"n {self.n}", f"offset {float(self.offset)!r}"]
        lines += [f"c {i} {float(v)!r}" for i, v in enumerate(self.c) if v != 0]
        for tag, A, b in (("eq", self.A_eq, self.b_eq), ("le", self.A_ineq, self.b_ineq)):
            lines.append(f"{tag}rows {len(b)}")
            coo = A.tocoo()
            lines += [f"{tag} {r} {cc} {float(v)!r}" for r, cc, v in zip(coo.row, coo.col, coo.data)]
            lines += [f"{tag}rhs {r} {float(v)!r}" for r, v in enumerate(b) if v != 0]
        for i, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            if lo != -np.inf or hi != np.inf:
                lines.append(f"bound {i} {float(lo)!r} {float(hi)!r}")
        lines += ["soc " + " ".join(map(str, blk)) for blk in self.soc]
        lines += ["exp " + " ".join(map(str, blk)) for blk in self.exp]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ConicProblem":
        n = 0
        offset = 0.0
        c = None
        trip = {"eq": ([], [], []), "le": ([], [], [])}
        rows = {"eq": 0, "le": 0}
        rhs = {"eq": {}, "le": {}}
        bounds = {}
        soc, exp = [], []
        for line in Path(path).read_text().splitlines():
            tok = line.split()
            if not tok:
                continue
            key = tok[0]
            if key == "n":
                n = int(tok[1])
                c = np.zeros(n)
            elif key == "offset":
                offset = float(tok[1])
            elif key == "c":
                c[int(tok[1])] = float(tok[2])
            elif key in ("eqrows", "lerows"):
                rows[key[:2]] = int(tok[1])
            elif key in ("eq", "le"):
                r_, c_, v_ = trip[key]
                r_.append(int(tok[1]))
                c_.append(int(tok[2]))
                v_.append(float(tok[3]))
            elif key in ("eqrhs", "lerhs"):
                rhs[key[:2]][int(tok[1])] = float(tok[2])
            elif key == "bound":
                bounds[int(tok[1])] = (float(tok[2]), float(tok[3]))
            elif key == "soc":
                soc.append(tuple(int(t) for t in tok[1:]))
            elif key == "exp":
                exp.append(tuple(int(t) for t in tok[1:]))
            else:
                raise ValueError(f"unknown record {key!r}")
        mats, vecs = {}, {}
        for tag in ("eq", "le"):
            r_, c_, v_ = trip[tag]
            mats[tag] = sp.csr_matrix((v_, (r_, c_)), shape=(rows[tag], n))
            b = np.zeros(rows[tag])
            for r, v in rhs[tag].items():
                b[r] = v
            vecs[tag] = b
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        for i, (lo, hi) in bounds.items():
            lb[i], ub[i] = lo, hi
        return cls(c=c, A_eq=mats["eq"], b_eq=vecs["eq"], A_ineq=mats["le"], b_ineq=vecs["le"],
                   lb=lb, ub=ub, soc=tuple(soc), exp=tuple(exp), offset=offset)


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    residual: float = np.nan
    backend: str = ""
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ConicBuilder:
    """Incrementally assemble a :class:`ConicProblem` from affine expressions."""

    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    names: list = field(default_factory=list)
    eq: list = field(default_factory=list)
    le: list = field(default_factory=list)
    soc: list = field(default_factory=list)
    exp: list = field(default_factory=list)
    _objective: Affine = field(default_factory=Affine)
    _heads: set = field(default_factory=set)

    @property
    def n(self) -> int:
        return len(self.lb)

    def var(self, size=None, lb=-np.inf, ub=np.inf, name=""):
        """New variable(s); returns an int, or an index array when ``size`` is given."""
        count = 1 if size is None else int(size)
        start = self.n
        self.lb.extend([float(lb)] * count)
        self.ub.extend([float(ub)] * count)
        self.names.extend([f"{name}[{i}]" if size is not None else name for i in range(count)])
        if size is None:
            return start
        return np.arange(start, start + count)

    def _as_var(self, expr, allow_reuse=True):
        if not isinstance(expr, Affine):
            expr = Affine(const=expr)
        i = expr.is_plain_var()
        if i is not None and allow_reuse:
            return i
        j = self.var(name="aux")
        self.eq.append(Affine.var(j) - expr)
        return j

    def add_eq(self, expr: Affine) -> None:
        """``expr == 0``"""
        self.eq.append(expr)

    def add_le(self, expr: Affine) -> None:
        """``expr <= 0``"""
        self.le.append(expr)

    def add_soc(self, head, tail) -> None:
        """``||tail||_2 <= head`` over affine expressions."""
        h = self._as_var(head)
        if h in self._heads:
            h = self._as_var(Affine.var(h), allow_reuse=False)
        self._heads.add(h)
        self.soc.append((h, *[self._as_var(t) for t in tail]))

    def add_product_cone(self, x, y, z) -> None:
        """``x^2 <= y z`` with ``y, z >= 0``, as ``||(x, (y - z)/2)|| <= (y + z)/2``."""
        self.add_soc((y + z) * 0.5, [x, (y - z) * 0.5])

    def add_square_epigraph(self, x: Affine, t: Affine) -> None:
        """``0.5 * x^2 <= t``"""
        # x^2 <= 2t  <=>  ||(x, t - 1/2)|| <= t + 1/2
        self.add_soc(t + 0.5, [x, t - 0.5])

    def add_exp(self, x, y, z) -> None:
        """``y * exp(x / y) <= z``"""
        self.exp.append((self._as_var(x), self._as_var(y), self._as_var(z)))

    def minimize(self, expr: Affine) -> None:
        self._objective = expr if isinstance(expr, Affine) else Affine(const=expr)

    def build(self) -> ConicProblem:
        n = self.n

        def stack(rows):
            data, ri, ci = [], [], []
            b = np.zeros(len(rows))
            for r, e in enumerate(rows):
                for i, v in e.terms.items():
                    ri.append(r)
                    ci.append(i)
                    data.append(v)
                b[r] = -e.const
            return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n)), b

        A_eq, b_eq = stack(self.eq)
        A_le, b_le = stack(self.le)
        c = np.zeros(n)
        for i, v in self._objective.terms.items():
            c[i] += v
        prob = ConicProblem(c=c, A_eq=A_eq, b_eq=b_eq, A_ineq=A_le, b_ineq=b_le,
                            lb=np.array(self.lb), ub=np.array(self.ub), soc=tuple(self.soc),
                            exp=tuple(self.exp), offset=self._objective.const,
                            names=tuple(self.names))
        prob.check()
        return prob
