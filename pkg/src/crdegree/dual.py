"""Second-order forward-mode differentiation.

A ``Jet`` carries a value together with its gradient and Hessian with respect
to a fixed set of seed variables. All three parts broadcast like numpy arrays,
so one Jet can represent a whole batch of evaluation points: ``val`` has shape
``S``, ``grad`` has shape ``S + (n,)`` and ``hess`` has shape ``S + (n, n)``.
"""

import numpy as np


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Jet:
    """Truncated second-order Taylor expansion in ``n`` variables."""

    __slots__ = ("val", "grad", "hess")
    __array_ufunc__ = None  # make ndarray (op) Jet defer to the Jet methods

    def __init__(self, val, grad, hess):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @classmethod
    def seed(cls, *values):
        """Independent variables x_0..x_{n-1} evaluated at ``values``."""
        n = len(values)
        vals = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in values])
        shape = vals[0].shape
        out = []
        for i, v in enumerate(vals):
            g = np.zeros(shape + (n,))
            g[..., i] = 1.0
            out.append(cls(v.copy(), g, np.zeros(shape + (n, n))))
        return tuple(out)

    @classmethod
    def constant(cls, c, n):
        c = np.asarray(c, dtype=float)
        return cls(c, np.zeros(c.shape + (n,)), np.zeros(c.shape + (n, n)))

    @property
    def nvars(self):
        return self.grad.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    def _lift(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.nvars)

    def _chain(self, f0, f1, f2):
        return Jet(
            f0,
            f1[..., None] * self.grad,
            f1[..., None, None] * self.hess + f2[..., None, None] * _outer(self.grad, self.grad),
        )

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val + other.val, self.grad + other.grad, self.hess + other.hess)
        c = np.asarray(other, dtype=float)
        val = self.val + c
        return Jet(val, np.broadcast_to(self.grad, val.shape + self.grad.shape[-1:]),
                   np.broadcast_to(self.hess, val.shape + self.hess.shape[-2:]))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.grad, -self.hess)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            u, v = self, other
            return Jet(
                u.val * v.val,
                u.val[..., None] * v.grad + v.val[..., None] * u.grad,
                u.val[..., None, None] * v.hess + v.val[..., None, None] * u.hess
                + _outer(u.grad, v.grad) + _outer(v.grad, u.grad),
            )
        c = np.asarray(other, dtype=float)
        return Jet(self.val * c, self.grad * c[..., None], self.hess * c[..., None, None])

    __rmul__ = __mul__

    def reciprocal(self):
        r = 1.0 / self.val
        return self._chain(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, c):
        if isinstance(c, Jet):
            return exp(c * log(self))
        c = float(c)
        if c == 0.0:
            return Jet.constant(np.ones_like(self.val), self.nvars)
        if c == 1.0:
            return self
        if c.is_integer():
            k = int(c)
            u = self.val
            return self._chain(u ** k, k * u ** (k - 1), k * (k - 1) * u ** (k - 2) if k != 1 else 0 * u)
        u = self.val
        return self._chain(u ** c, c * u ** (c - 1.0), c * (c - 1.0) * u ** (c - 2.0))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    # comparisons act on values, handy for masks
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    def __repr__(self):
        return f"Jet(val={self.val!r}, grad={self.grad!r})"


def value(x):
    return x.val if isinstance(x, Jet) else x


def sqrt(x):
    if not isinstance(x, Jet):
        return np.sqrt(x)
    s = np.sqrt(x.val)
    return x._chain(s, 0.5 / s, -0.25 / (s * x.val))


def exp(x):
    if not isinstance(x, Jet):
        return np.exp(x)
    e = np.exp(x.val)
    return x._chain(e, e, e)


def log(x):
    if not isinstance(x, Jet):
        return np.log(x)
    return x._chain(np.log(x.val), 1.0 / x.val, -1.0 / x.val ** 2)


def sin(x):
    if not isinstance(x, Jet):
        return np.sin(x)
    s, c = np.sin(x.val), np.cos(x.val)
    return x._chain(s, c, -s)


def cos(x):
    if not isinstance(x, Jet):
        return np.cos(x)
    s, c = np.sin(x.val), np.cos(x.val)
    return x._chain(c, -s, -c)


def where(mask, a, b):
    """Elementwise select that keeps derivative information."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.where(mask, a, b)
    n = a.nvars if isinstance(a, Jet) else b.nvars
    a = a if isinstance(a, Jet) else Jet.constant(a, n)
    b = b if isinstance(b, Jet) else Jet.constant(b, n)
    mask = np.asarray(mask)
    return Jet(
        np.where(mask, a.val, b.val),
        np.where(mask[..., None], a.grad, b.grad),
        np.where(mask[..., None, None], a.hess, b.hess),
    )


def derivatives(f, *point):
    """Value, gradient and Hessian of ``f`` at ``point`` (scalars or arrays)."""
    out = f(*Jet.seed(*point))
    if not isinstance(out, Jet):
        shape = np.broadcast(*[np.asarray(p) for p in point]).shape
        n = len(point)
        return np.broadcast_to(out, shape).astype(float), np.zeros(shape + (n,)), np.zeros(shape + (n, n))
    return out.val, out.grad, out.hess
