"""Conjugate gradients and the CG-backed inverse of a parametrized operator."""

from __future__ import annotations

import numpy as np

from ..autodiff.linop import Linop
from ..autodiff.nlop import AtomicNlop, Nlop


class SolverError(RuntimeError):
    """CG broke down or (in strict mode) did not reach the tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def _dots(a, b, axes):
    return np.sum((np.conj(a) * b).real, axis=axes, keepdims=True)


def cg(apply, b, max_iter: int = 10, tol: float = 0.0, batch_axis: int | None = None):
    """Solve ``apply(x) = b`` for self-adjoint positive-definite ``apply``.

    Starts from zero.  With ``batch_axis`` every slice along that axis is an
    independent system with its own step sizes.  Iteration stops when every
    relative residual ``|r| / |b|`` is at most ``tol`` or after ``max_iter``
    steps.  Returns ``(x, info)``; ``info`` has ``iterations``, ``residual``
    (worst relative residual) and ``converged``.
    """
    b = np.asarray(b)
    axes = tuple(a for a in range(b.ndim) if a != batch_axis) if batch_axis is not None else None
    if axes is None:
        axes = tuple(range(b.ndim))
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = _dots(r, r, axes)
    bb = rr.copy()
    bnorm = np.sqrt(bb)
    scale = np.where(bnorm > 0, bnorm, 1.0)

    def rel():
        return float(np.max(np.sqrt(rr) / scale))

    it = 0
    while it < max_iter and rel() > tol:
        active = np.sqrt(rr) / scale > tol
        ap = apply(p)
        pap = _dots(p, ap, axes)
        if not (np.all(np.isfinite(pap)) and np.all(np.isfinite(ap))):
            raise SolverError("conjugate gradients broke down (non-finite value)", rel())
        alpha = np.where(active & (pap > 0), rr / np.where(pap > 0, pap, 1.0), 0.0)
        x = x + alpha.astype(b.dtype) * p
        r = r - alpha.astype(b.dtype) * ap
        rr_new = _dots(r, r, axes)
        beta = np.where(active & (rr > 0), rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        p = r + beta.astype(b.dtype) * p
        rr = np.where(active, rr_new, rr)
        it += 1
    res = rel()
    return x, {"iterations": it, "residual": res, "converged": res <= tol}


def cg_normal_solve(A: Linop, lam: float, b, max_iter: int = 10, tol: float = 0.0, batch_axis=None):
    """``(A^H A + lam) x = b`` by CG; returns ``(x, info)``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return cg(lambda v: A.normal(v) + lam * v, b, max_iter, tol, batch_axis)


class InverseNlop(AtomicNlop):
    """``(y, p_1, .., p_k) -> x`` with ``S(x, p_1, .., p_k) = y``.

    ``S`` must be linear, self-adjoint and positive definite in its first
    input for admissible parameters.  Derivatives follow from implicit
    differentiation of ``S(x, p) = y``:

        D_y x = S_p^{-1}
        D_p x dp = -S_p^{-1} (D_p S(x, p) dp)

    and the adjoint reuses one solve ``w = S_p^{-1} g`` for every input.
    Every solve runs the same fixed CG schedule from zero, so the operator
    is a deterministic function of its inputs.
    """

    def __init__(self, S: Nlop, max_iter: int = 10, tol: float = 0.0, batch_axis: int | None = None,
                 strict: bool = False):
        if S.num_outputs != 1 or S.out_shapes[0] != S.in_shapes[0]:
            raise ValueError("the operator to invert must map its first input's shape to itself")
        super().__init__((S.in_shapes[0],) + S.in_shapes[1:], [S.out_shapes[0]], name=f"inv({S.name})")
        self.S = S
        self.max_iter = int(max_iter)
        self.tol = float(tol)
        self.batch_axis = batch_axis
        self.strict = strict
        self.holomorphic = S.holomorphic
        self.last_info = None

    def children(self):
        return [self.S]

    def _solve(self, st, b):
        x, info = cg(lambda v: self.S.eval(v, *st.ps)[0], b, self.max_iter, self.tol, self.batch_axis)
        self.last_info = info
        if self.strict and not info["converged"]:
            raise SolverError(f"CG stopped after {info['iterations']} iterations at residual "
                              f"{info['residual']:.3e}", info["residual"])
        return x

    def _forward(self, st, y, *ps):
        st.ps = ps
        x = self._solve(st, y)
        # linearization point for D_p S
        self.S.apply(x, *ps)
        return x

    def reset_state(self):
        super().reset_state()
        self.S.reset_state()

    def _fwd_deriv(self, dxs, outs):
        st = self._st()
        rhs = dxs.get(0)
        rhs = None if rhs is None else rhs.copy()
        params = {i: v for i, v in dxs.items() if i > 0}
        if params:
            dsp = self.S.forward_deriv(params, [0])[0]
            rhs = -dsp if rhs is None else rhs - dsp
        if rhs is None:
            return {}
        return {0: self._solve(st, rhs)}

    def _bwd(self, dys, ins):
        st = self._st()
        g = dys.get(0)
        if g is None:
            return {}
        w = self._solve(st, g)
        res = {}
        if 0 in ins:
            res[0] = w
        params = [i for i in ins if i > 0]
        if params:
            back = self.S.backward({0: w}, params)
            for i in params:
                res[i] = -back[i]
        return res


def make_inverse_nlop(S: Nlop, max_iter: int = 10, tol: float = 0.0, batch_axis=None, strict=False):
    return InverseNlop(S, max_iter, tol, batch_axis, strict)
