"""Loss operators ``(prediction, reference) -> (1,)`` with a real value."""

from __future__ import annotations

import numpy as np

from ..autodiff.nlop import AtomicNlop

CCE_CLAMP = 1e-12


class _Loss(AtomicNlop):
    def __init__(self, shape, name):
        super().__init__([shape, shape], [(1,)], name=name)
        self.n = int(np.prod(self.in_shapes[0]))

    def _sign(self, i):
        return 1.0 if i == 0 else -1.0


class MSE(_Loss):
    """``mean |p - r|^2``."""

    def __init__(self, shape):
        super().__init__(shape, "mse")

    def _forward(self, st, p, r):
        st.d = p - r
        return np.array([np.mean((st.d * np.conj(st.d)).real)], dtype=p.dtype)

    def _deriv(self, st, o, i, dx):
        v = 2.0 / self.n * (np.conj(st.d) * dx).real.sum()
        return np.array([self._sign(i) * v], dtype=dx.dtype)

    def _adjoint(self, st, o, i, dy):
        return (self._sign(i) * 2.0 / self.n * dy.real[0] * st.d).astype(dy.dtype)


class MAD(_Loss):
    """``mean |p - r|``; the subgradient at ``p = r`` is taken as 0."""

    def __init__(self, shape):
        super().__init__(shape, "mad")

    def _forward(self, st, p, r):
        d = p - r
        a = np.abs(d)
        st.u = np.where(a > 0, d / np.where(a > 0, a, 1), 0)
        return np.array([a.mean()], dtype=p.dtype)

    def _deriv(self, st, o, i, dx):
        v = (np.conj(st.u) * dx).real.sum() / self.n
        return np.array([self._sign(i) * v], dtype=dx.dtype)

    def _adjoint(self, st, o, i, dy):
        return (self._sign(i) / self.n * dy.real[0] * st.u).astype(dy.dtype)


class CCE(_Loss):
    """Categorical cross-entropy ``-(1/N) sum Re(r) log(max(Re p, 1e-12))``.

    ``N`` is the number of samples, i.e. the element count divided by the
    size of the class axis.  Clamped entries get zero derivative.
    """

    def __init__(self, shape, class_axis=0):
        super().__init__(shape, "cce")
        self.nsamples = self.n // self.in_shapes[0][class_axis]

    def _forward(self, st, p, r):
        pr = p.real
        st.keep = pr > CCE_CLAMP
        st.pc = np.maximum(pr, CCE_CLAMP)
        st.r = r.real
        st.logp = np.log(st.pc)
        return np.array([-(st.r * st.logp).sum() / self.nsamples], dtype=p.dtype)

    def _dp(self, st):
        return np.where(st.keep, -st.r / st.pc, 0.0) / self.nsamples

    def _deriv(self, st, o, i, dx):
        if i == 0:
            v = (self._dp(st) * dx.real).sum()
        else:
            v = -(st.logp * dx.real).sum() / self.nsamples
        return np.array([v], dtype=dx.dtype)

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return (self._dp(st) * dy.real[0]).astype(dy.dtype)
        return (-st.logp / self.nsamples * dy.real[0]).astype(dy.dtype)


LOSSES = {"mse": MSE, "mad": MAD, "cce": CCE}


def loss(kind, shape, **kw):
    try:
        cls = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}") from None
    return cls(shape, **kw)
