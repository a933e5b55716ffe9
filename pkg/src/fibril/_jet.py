"""First-order jets of matrix-valued functions.

A Jet carries a value v[..., r, c] and its partial derivatives
d[..., k, r, c] with respect to the n ambient coordinates (Q, f).  Products,
sums, transposes, inverses and log-determinants propagate derivatives by
the usual rules, so composite frame quantities get exact derivatives from
the model's primitive derivatives.
"""
from __future__ import annotations

import numpy as np


class Jet:
    __slots__ = ("v", "d")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, v, d):
        self.v = np.asarray(v, dtype=float)
        self.d = np.asarray(d, dtype=float)

    @staticmethod
    def const(v, n):
        v = np.asarray(v, dtype=float)
        return Jet(v, np.zeros(v.shape[:-2] + (n,) + v.shape[-2:]))

    @property
    def n(self):
        return self.d.shape[-3]

    @property
    def T(self):
        return Jet(self.v.swapaxes(-1, -2), self.d.swapaxes(-1, -2))

    def __matmul__(self, o):
        if not isinstance(o, Jet):
            o = np.asarray(o, dtype=float)
            return Jet(self.v @ o, self.d @ o[..., None, :, :])
        return Jet(self.v @ o.v, self.d @ o.v[..., None, :, :] + self.v[..., None, :, :] @ o.d)

    def __rmatmul__(self, o):
        o = np.asarray(o, dtype=float)
        return Jet(o @ self.v, o[..., None, :, :] @ self.d)

    def __add__(self, o):
        if not isinstance(o, Jet):
            return Jet(self.v + o, self.d)
        return Jet(self.v + o.v, self.d + o.d)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.d)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, s):
        """Multiply by a plain number or by a scalar jet of shape (..., 1, 1)."""
        if isinstance(s, Jet):
            return Jet(self.v * s.v, self.d * s.v[..., None, :, :] + s.d * self.v[..., None, :, :])
        return Jet(self.v * s, self.d * s)

    __rmul__ = __mul__

    def inv(self):
        vi = np.linalg.inv(self.v)
        return Jet(vi, -vi[..., None, :, :] @ self.d @ vi[..., None, :, :])

    def logdet(self):
        """Scalar jet (..., 1, 1) of log det v (v must have positive determinant)."""
        sign, ld = np.linalg.slogdet(self.v)
        vi = np.linalg.inv(self.v)
        dl = np.einsum("...ij,...kji->...k", vi, self.d)
        return Jet(ld[..., None, None], dl[..., None, None])

    def exp(self):
        e = np.exp(self.v)
        return Jet(e, self.d * e[..., None, :, :])

    def block(self, rows, cols):
        return Jet(self.v[..., rows, cols], self.d[..., rows, cols])

    def projected(self, P):
        """Derivatives with the Q*-directions projected: d*_A = P^D_A d_D.

        P is the (n x n) matrix blockdiag(Pperp, I) acting on the derivative index.
        """
        return np.einsum("...dk,...drc->...krc", P, self.d)


def hstack(blocks):
    return Jet(np.concatenate([b.v for b in blocks], -1), np.concatenate([b.d for b in blocks], -1))


def vstack(blocks):
    return Jet(np.concatenate([b.v for b in blocks], -2), np.concatenate([b.d for b in blocks], -2))


def embed_Q(v, dQ, n):
    """Jet of a function of Q only, with dQ[..., k, r, c] over the n_P Q-coordinates."""
    d = np.zeros(dQ.shape[:-3] + (n,) + dQ.shape[-2:])
    d[..., : dQ.shape[-3], :, :] = dQ
    return Jet(v, d)


def embed_f(v, df, n):
    """Jet of a function of f only; df indexes the trailing n_V coordinates."""
    d = np.zeros(df.shape[:-3] + (n,) + df.shape[-2:])
    d[..., n - df.shape[-3]:, :, :] = df
    return Jet(v, d)
