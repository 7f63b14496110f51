"""MoDL: unrolled alternation of a CNN denoiser and a CG data-consistency solve.

One iteration maps ``x`` to

    Q(A^H y + lam * D(x), lam),    Q(b, lam) = (A^H A + lam)^{-1} b

with ``D(x) = x + N(x_0)`` where ``N`` is a residual CNN applied to the image
of the first map set (other map sets pass through unchanged).  The CNN is
``L`` convolution layers; all but the last are followed by batch
normalization and CReLU, the last maps back to one channel.  CNN weights and
``lam = exp(rho)`` are shared by all iterations; batch-norm moving statistics
are kept per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import linop as lo
from ..autodiff.nlop import checkpoint
from ..autodiff.ops import ExpReal, LinComb, RealScale, from_linop
from ..nn import layers
from ..nn.conv import Conv, ConvGeometry
from ..nn.model import STAT, WEIGHT, Model, connect, constant, glorot, reorder, reorder_outputs
from .cg import InverseNlop, cg_normal_solve
from .sense import BATCH, build_sense, image_shape, sense_adjoint, sense_normal
from .varnet import map0


@dataclass
class ModlConfig:
    T: int = 10
    layers: int = 5
    filters: int = 32
    kernel: int = 3
    lam_init: float = 0.05
    cg_iter: int = 10
    cg_tol: float = 0.0
    residual: bool = True
    checkpoint: bool = False

    def validate(self):
        if self.T < 1 or self.layers < 1 or self.filters < 1 or self.kernel < 1 or self.cg_iter < 1:
            raise ValueError(f"invalid MoDL configuration: {self}")
        if self.lam_init <= 0:
            raise ValueError("lambda must start positive")


def _m(op, ins, outs, **kw):
    return Model(op, ins, outs, **kw)


def data_consistency_operator(coil_shape) -> Model:
    """``S(x, lam, coils, pattern) = A^H A x + Re(lam) x``."""
    ishape = image_shape(coil_shape)
    parts = [
        _m(sense_normal(coil_shape), ["x_n", "coils", "pattern"], ["ahax"]),
        _m(RealScale(ishape), ["x_l", "lam"], ["lx"]),
        _m(LinComb(ishape, [1, 1]), ["ahax", "lx"], ["y"]),
    ]
    s = connect(parts, share={"x": ["x_n", "x_l"]})
    return reorder(s, ["x", "lam", "coils", "pattern"])


def denoiser(coil_shape, cfg: ModlConfig, t: int, mode=layers.TRAIN) -> Model:
    """``x{t} -> d{t}``; weights ``conv{l}``, ``bn{l}.gamma/beta``, stats ``t{t}.bn{l}.*``."""
    ishape = image_shape(coil_shape)
    sel = map0(ishape)
    shape = sel.out_shape
    k = (cfg.kernel, cfg.kernel)
    taps = cfg.kernel**2
    p = f"t{t}"
    parts = [_m(from_linop(sel), ["x_r"], ["h0"])]
    for layer in range(cfg.layers):
        last = layer == cfg.layers - 1
        cout = 1 if last else cfg.filters
        geom = ConvGeometry(shape, cout, k, axes=(0, 1), channel_axis=2)
        w = f"{p}.conv{layer}"
        parts.append(_m(Conv(geom), [f"h{layer}", w], [f"c{layer}" if not last else "n"], kinds={w: WEIGHT},
                        init={w: glorot(shape[2] * taps, cout * taps)}))
        shape = geom.out_shape
        if last:
            break
        bn = f"{p}.bn{layer}"
        op = layers.BatchNorm(shape, 2, mode)
        mean, var = f"{bn}.mean", f"{bn}.var"
        outs = [f"b{layer}"] + ([f"{bn}.mean_out", f"{bn}.var_out"] if mode == layers.TRAIN else [])
        upd = {f"{bn}.mean_out": mean, f"{bn}.var_out": var} if mode == layers.TRAIN else {}
        parts.append(_m(op, [f"c{layer}", mean, var], outs, kinds={mean: STAT, var: STAT},
                        init={mean: constant(0.0), var: constant(1.0)}, stat_updates=upd))
        g, b = f"{p}.bn{layer}.gamma", f"{p}.bn{layer}.beta"
        parts.append(_m(layers.Affine(shape, 2), [f"b{layer}", g, b], [f"a{layer}"], kinds={g: WEIGHT, b: WEIGHT},
                        init={g: constant(1.0), b: constant(0.0)}))
        parts.append(_m(layers.CReLU(shape), [f"a{layer}"], [f"h{layer + 1}"]))
    parts.append(_m(from_linop(sel.H), ["n"], ["n_full"]))
    if cfg.residual:
        parts.append(_m(LinComb(ishape, [1, 1]), ["x_s", "n_full"], [f"d{t}"]))
        return connect(parts, share={f"x{t}": ["x_r", "x_s"]})
    parts.append(_m(from_linop(lo.identity(ishape)), ["n_full"], [f"d{t}"]))
    return connect(parts, share={f"x{t}": ["x_r"]})


def modl_step(coil_shape, cfg: ModlConfig, t: int = 0, mode=layers.TRAIN) -> Model:
    """``(x{t}, adjy, coils, pattern, rho, weights, stats) -> x{t+1}``."""
    cs = tuple(coil_shape)
    ishape = image_shape(cs)
    p = f"t{t}"
    S = data_consistency_operator(cs)
    Q = InverseNlop(S.op, cfg.cg_iter, cfg.cg_tol, batch_axis=BATCH)
    rho = f"{p}.rho"
    parts = [
        denoiser(cs, cfg, t, mode),
        _m(ExpReal((1,)), [rho], ["lam"], kinds={rho: WEIGHT}, init={rho: constant(np.log(cfg.lam_init))},
           real=[rho]),
        _m(RealScale(ishape), [f"d{t}", "lam_d"], ["ld"]),
        _m(LinComb(ishape, [1, 1]), ["adjy_r", "ld"], ["rhs"]),
        _m(Q, ["rhs", "lam_q", f"{p}.coils", f"{p}.pattern"], [f"x{t + 1}"]),
    ]
    step = connect(parts, share={"lam": ["lam_d", "lam_q"], f"{p}.adjy": ["adjy_r"]})
    if cfg.checkpoint:
        step = step.map_op(checkpoint)
    return step


def build_modl(coil_shape, cfg: ModlConfig | None = None, mode=layers.TRAIN) -> Model:
    """``(kspace, coils, pattern) -> image`` of the first map set.

    In train mode batch normalization uses batch statistics and the updated
    moving statistics are extra outputs; in infer mode it reads them.
    """
    cfg = cfg or ModlConfig()
    cfg.validate()
    cs = tuple(coil_shape)
    ishape = image_shape(cs)
    parts = [_m(sense_adjoint(cs), ["kspace", "a.coils", "a.pattern"], ["adjy"])]
    parts += [modl_step(cs, cfg, t, mode) for t in range(cfg.T)]
    parts.append(_m(from_linop(map0(ishape)), [f"x{cfg.T}"], ["image"]))
    T = range(cfg.T)
    share = {
        "coils": ["a.coils"] + [f"t{t}.coils" for t in T],
        "pattern": ["a.pattern"] + [f"t{t}.pattern" for t in T],
        "adjy": ["x0"] + [f"t{t}.adjy" for t in T],
        "rho": [f"t{t}.rho" for t in T],
    }
    for layer in range(cfg.layers):
        share[f"conv{layer}"] = [f"t{t}.conv{layer}" for t in T]
        if layer < cfg.layers - 1:
            for nm in ("gamma", "beta"):
                share[f"bn{layer}.{nm}"] = [f"t{t}.bn{layer}.{nm}" for t in T]
    net = connect(parts, share=share)
    front = ["kspace", "coils", "pattern"]
    net = reorder(net, front + [n for n in net.inputs if n not in front])
    return reorder_outputs(net, ["image"] + [n for n in net.outputs if n != "image"])


def cg_sense(kspace, coils, pattern, lam, max_iter=10, tol=0.0):
    """Plain CG-SENSE ``(A^H A + lam)^{-1} A^H y`` per slice, first map set."""
    A = build_sense(coils, pattern)
    x, info = cg_normal_solve(A, lam, A.adjoint(kspace), max_iter, tol, batch_axis=BATCH)
    return map0(A.in_shape).forward(x), info
