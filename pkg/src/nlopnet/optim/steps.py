"""Optimizer steps as pure functions of (weights, gradient, state, config).

Complex weights are updated with the adjoint-derivative gradient ``g =
DF^H(1)``: its real part drives the real part of the weight and its imaginary
part the imaginary part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHMS = ("sgd", "adam", "ipalm")


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN or infinity."""


@dataclass
class TrainConfig:
    algorithm: str = "adam"
    lr: float = 1e-3
    batch_size: int = 1
    epochs: int = 1
    seed: int = 0
    deterministic: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # iPALM inertia: gradient point x + beta*(x - x_prev), prox point x + alpha*(x - x_prev)
    alpha: float = 0.5
    beta: float = 0.5
    ipalm_sequential: bool = False
    clip_norm: float | None = None
    drop_last: bool = True
    threads: int = 1
    verbose: bool = True

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("iPALM inertia parameters must lie in [0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        return self


def check_finite(name, g):
    if not np.all(np.isfinite(g)):
        bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
        raise NonFiniteError(f"non-finite gradient for {name!r} ({bad} of {np.size(g)} entries)")


def sgd_step(theta, g, lr):
    """``theta - lr * g``."""
    check_finite("sgd", g)
    return theta - lr * g


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape, dtype=np.complex128):
        return cls(np.zeros(shape, dtype), np.zeros(shape, np.float64), 0)


def adam_step(theta, g, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam with a complex first and a ``|g|^2`` second moment."""
    check_finite("adam", g)
    if state.m.shape != np.shape(theta):
        raise ValueError("Adam state does not match the weight shape")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * (g * np.conj(g)).real
    mhat = m / (1 - cfg.beta1**t)
    vhat = v / (1 - cfg.beta2**t)
    return theta - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps), AdamState(m, v, t)


@dataclass(frozen=True)
class IPALMState:
    prev: dict = field(default_factory=dict)
    t: int = 0


def _identity(x):
    return x


def ipalm_step(blocks: dict, grad_fn, state: IPALMState, cfg: TrainConfig, prox: dict | None = None):
    """One inertial proximal alternating linearized step over named blocks.

    For every block ``x`` with previous iterate ``x_prev``::

        z = x + beta  * (x - x_prev)        # gradient point
        y = x + alpha * (x - x_prev)        # extrapolated point
        x_new = prox(y - lr * grad_x H(z))

    ``grad_fn(point, names)`` returns gradients of the named blocks at
    ``point``.  By default all blocks share one gradient evaluation at the
    extrapolated point; with ``cfg.ipalm_sequential`` the blocks are updated
    one after another, each gradient taken at the partially updated point.
    Returns ``(new_blocks, new_state)``.
    """
    prox = prox or {}
    prev = {n: state.prev.get(n, x) for n, x in blocks.items()}
    z = {n: x + cfg.beta * (x - prev[n]) for n, x in blocks.items()}
    y = {n: x + cfg.alpha * (x - prev[n]) for n, x in blocks.items()}
    names = list(blocks)
    new = dict(blocks)
    if cfg.ipalm_sequential:
        for n in names:
            point = {**new, n: z[n]}
            g = grad_fn(point, [n])[n]
            check_finite(n, g)
            new[n] = prox.get(n, _identity)(y[n] - cfg.lr * g)
    else:
        grads = grad_fn(z, names)
        for n in names:
            check_finite(n, grads[n])
            new[n] = prox.get(n, _identity)(y[n] - cfg.lr * grads[n])
    return new, IPALMState(dict(blocks), state.t + 1)


def soft_threshold(tau):
    """Proximal map of ``tau * |x|`` (complex magnitudes shrink by ``tau``)."""

    def prox(x):
        a = np.abs(x)
        return np.where(a > tau, (1 - tau / np.where(a > 0, a, 1)) * x, 0).astype(np.asarray(x).dtype)

    return prox


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale all gradients together so their joint norm is at most ``max_norm``."""
    norm = np.sqrt(sum(float(np.vdot(g, g).real) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads
    s = max_norm / norm
    return {n: g * s for n, g in grads.items()}
