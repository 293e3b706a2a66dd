"""Real embedding of complex linear forms.

A complex vector variable ``x`` of length ``n`` is stored as ``2n`` real
variables ``[Re x, Im x]``.
"""

from __future__ import annotations

import numpy as np

from .problem import Affine, ConicBuilder


def realify(c: np.ndarray):
    """Rows ``(a, b)`` with ``Re(c^H x) = a @ xr`` and ``Im(c^H x) = b @ xr``.

    For a real ``c`` the real part acts on ``Re x`` only (identity mapping).
    """
    c = np.asarray(c, dtype=complex)
    re, im = c.real, c.imag
    return np.concatenate([re, im]), np.concatenate([-im, re])


def realify_matrix(A: np.ndarray) -> np.ndarray:
    """Real matrix ``M`` with ``[Re(Ax); Im(Ax)] = M @ [Re x; Im x]``."""
    A = np.asarray(A, dtype=complex)
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


class ComplexVar:
    """A complex vector variable living in a :class:`ConicBuilder`."""

    def __init__(self, builder: ConicBuilder, n: int, name="w"):
        self.n = n
        self.idx = builder.var(2 * n, name=name)

    def inner(self, c) -> tuple[Affine, Affine]:
        """Real and imaginary parts of ``c^H x`` as affine expressions."""
        a, b = realify(c)
        return Affine.combo(self.idx, a), Affine.combo(self.idx, b)

    def parts(self, select=None) -> list[Affine]:
        """All real coordinates (optionally restricted to complex entries ``select``)."""
        rows = range(self.n) if select is None else select
        out = []
        for i in rows:
            out.append(Affine.var(self.idx[i]))
            out.append(Affine.var(self.idx[self.n + i]))
        return out

    def value(self, x) -> np.ndarray:
        v = np.asarray(x)[self.idx]
        return v[:self.n] + 1j * v[self.n:]
