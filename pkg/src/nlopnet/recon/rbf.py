"""Trainable activation built from Gaussian radial basis functions."""

from __future__ import annotations

import numpy as np

from ..autodiff.nlop import AtomicNlop


def rbf_centers(n, lo=-1.0, hi=1.0):
    """``n`` uniform centers on ``[lo, hi]`` and the matching width (their spacing)."""
    if n < 2:
        raise ValueError("need at least two basis functions")
    mu = np.linspace(lo, hi, n)
    return mu, float(mu[1] - mu[0])


def rbf_activation(z, w, mu, sigma):
    """``sum_j w_j exp(-(z - mu_j)^2 / (2 sigma^2))`` elementwise; plain numpy."""
    mu = np.asarray(mu, dtype=float)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if np.any(np.diff(mu) <= 0):
        raise ValueError("centers must be strictly increasing")
    z = np.asarray(z, dtype=float)[..., None]
    return (np.asarray(w, dtype=float) * np.exp(-((z - mu) ** 2) / (2 * sigma**2))).sum(axis=-1)


class RBF(AtomicNlop):
    """``(z, w) -> phi`` with one RBF expansion per channel.

    ``z`` is read through its real part and has its channels on
    ``channel_axis``; ``w`` has shape ``(channels, n_basis)`` and is read
    through its real part.  The output is real.
    """

    def __init__(self, shape, channel_axis, mu, sigma):
        shape = tuple(int(d) for d in shape)
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = float(sigma)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if np.any(np.diff(self.mu) <= 0):
            raise ValueError("centers must be strictly increasing")
        self.ch = int(channel_axis)
        nk, nw = shape[self.ch], len(self.mu)
        super().__init__([shape, (nk, nw)], [shape], name="rbf")
        # w is broadcast as (.., nk at channel axis, .., nw)
        self._wshape = [1] * len(shape) + [nw]
        self._wshape[self.ch] = nk

    def _basis(self, z):
        phi = z.real[..., None] - self.mu
        phi *= phi
        phi *= -0.5 / self.sigma**2
        return np.exp(phi, out=phi)

    def _forward(self, st, z, w):
        phi = self._basis(z)
        wr = w.real.reshape(self._wshape)
        st.phi = phi
        out = np.einsum("...j,...j->...", phi, np.broadcast_to(wr, phi.shape))
        # d/dz sum_j w_j phi_j = sum_j w_j phi_j (mu_j - z) / sigma^2
        wmu = np.einsum("...j,...j->...", phi, np.broadcast_to(wr * self.mu, phi.shape))
        st.slope = (wmu - z.real * out) / self.sigma**2
        return out.astype(z.dtype)

    def _wsum(self, a):
        # sum over everything except the channel axis and the basis axis
        axes = tuple(k for k in range(a.ndim - 1) if k != self.ch)
        s = a.sum(axis=axes)
        return s

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return (st.slope * dx.real).astype(dx.dtype)
        dw = np.broadcast_to(dx.real.reshape(self._wshape), st.phi.shape)
        return np.einsum("...j,...j->...", st.phi, dw).astype(dx.dtype)

    def _adjoint(self, st, o, i, dy):
        g = dy.real
        if i == 0:
            return (st.slope * g).astype(dy.dtype)
        return self._wsum(st.phi * g[..., None]).astype(dy.dtype)
