"""Minimal forward-mode differentiation on numpy arrays.

A Dual carries a value of shape S and a gradient of shape S + (P,) holding
derivatives with respect to P chart parameters. Only the operations needed
by the pose residual chain are implemented.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def constant(cls, val, nparams: int) -> "Dual":
        val = np.asarray(val, dtype=float)
        return cls(val, np.zeros(val.shape + (nparams,)))

    @classmethod
    def seed(cls, val: float, index: int, nparams: int) -> "Dual":
        g = np.zeros(nparams)
        g[index] = 1.0
        return cls(float(val), g)

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, self.grad.shape[-1])

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.val + o.val, self.grad + o.grad)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.val - o.val, self.grad - o.grad)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(
            self.val * o.val,
            self.grad * o.val[..., None] + o.grad * self.val[..., None],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        inv = 1.0 / o.val
        val = self.val * inv
        return Dual(val, (self.grad - o.grad * val[..., None]) * inv[..., None])

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.grad[idx])

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.grad.reshape(-1, self.grad.shape[-1]).sum(axis=0))
        return Dual(self.val.sum(axis=axis), self.grad.sum(axis=axis))

    def sqrt(self):
        s = np.sqrt(self.val)
        return Dual(s, self.grad * (0.5 / s)[..., None])

    def sin(self):
        return Dual(np.sin(self.val), self.grad * np.cos(self.val)[..., None])

    def cos(self):
        return Dual(np.cos(self.val), self.grad * (-np.sin(self.val))[..., None])

    @staticmethod
    def stack(items, axis=0) -> "Dual":
        duals = [it for it in items if isinstance(it, Dual)]
        nparams = duals[0].grad.shape[-1]
        items = [it if isinstance(it, Dual) else Dual.constant(it, nparams) for it in items]
        val = np.stack([it.val for it in items], axis=axis)
        ax = axis if axis >= 0 else axis - 1
        grad = np.stack([it.grad for it in items], axis=ax)
        return Dual(val, grad)


def dcross(a: Dual, b: Dual) -> Dual:
    """Cross product of two dual 3-vectors."""
    return Dual.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def dnorm(a: Dual) -> Dual:
    return (a * a).sum().sqrt()


def dmatmul(a: Dual, b: Dual) -> Dual:
    """Matrix product of dual 2D arrays."""
    val = a.val @ b.val
    grad = np.einsum("ijp,jk->ikp", a.grad, b.val) + np.einsum("ij,jkp->ikp", a.val, b.grad)
    return Dual(val, grad)


def drows_matmul(rows: Dual, m: Dual) -> Dual:
    """(n, 3) dual rows times a dual (3, 3) matrix."""
    val = rows.val @ m.val
    grad = np.einsum("njp,jk->nkp", rows.grad, m.val) + np.einsum("nj,jkp->nkp", rows.val, m.grad)
    return Dual(val, grad)


def safe_arccos(c: Dual, sin_floor: float = 1e-12) -> Dual:
    """arccos with clamped input and a floored derivative near |c| = 1."""
    cv = np.clip(c.val, -1.0, 1.0)
    r = np.arccos(cv)
    denom = np.maximum(np.sqrt(np.maximum(1.0 - cv * cv, 0.0)), sin_floor)
    return Dual(r, c.grad * (-1.0 / denom)[..., None])
