"""Variational network: unrolled gradient steps with a learned regularizer.

One step maps ``x`` to

    x - sum_i K_i^H phi_i(Re K_i x_0) - lam * (A^H A x - A^H y)

where ``x_0`` is the image of the first map set (the regularizer touches only
that one), ``K_i`` are complex convolution filters, ``phi_i`` are RBF
expansions and ``lam >= 0`` is a trained step size.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..autodiff import linop as lo
from ..autodiff.nlop import checkpoint
from ..autodiff.ops import LinComb, RealPart, RealScale, from_linop
from ..nn.conv import Conv, ConvGeometry, ConvTransposed
from ..nn.model import WEIGHT, Model, connect, constant, fixed, glorot, project_nonnegative, reorder
from .rbf import RBF, rbf_centers
from .sense import MAPS, image_shape, sense_adjoint, sense_normal


@dataclass
class VarNetConfig:
    T: int = 10
    filters: int = 24
    kernel: int = 11
    rbf: int = 31
    lam_init: float = 1.0
    rbf_init_scale: float = 0.1
    checkpoint: bool = False

    def validate(self):
        if self.T < 1 or self.filters < 1 or self.kernel < 1 or self.rbf < 2:
            raise ValueError(f"invalid VarNet configuration: {self}")


def _m(op, ins, outs, **kw):
    return Model(op, ins, outs, **kw)


def map0(shape):
    """Linop selecting the first map set."""
    return lo.extract(shape, MAPS, 0, 1)


def varnet_step(coil_shape, cfg: VarNetConfig, t: int = 0) -> Model:
    """Model ``(x{t}, adjy, coils, pattern, weights) -> x{t+1}``."""
    cs = tuple(coil_shape)
    ishape = image_shape(cs)
    sel = map0(ishape)
    geom = ConvGeometry(sel.out_shape, cfg.filters, (cfg.kernel, cfg.kernel), axes=(0, 1), channel_axis=2)
    mu, sigma = rbf_centers(cfg.rbf)
    p = f"t{t}"
    wk, wr, wl = f"{p}.conv", f"{p}.rbf", f"{p}.lam"
    taps = cfg.kernel * cfg.kernel
    kinds = {wk: WEIGHT}
    parts = [
        _m(from_linop(sel), ["x_r"], ["m0"]),
        _m(Conv(geom), ["m0", wk], ["kx"], kinds=kinds, init={wk: glorot(taps, cfg.filters * taps)}),
        _m(RealPart(geom.out_shape), ["kx"], ["z"]),
        _m(RBF(geom.out_shape, 2, mu, sigma), ["z", wr], ["phi"], kinds={wr: WEIGHT},
           init={wr: fixed(cfg.rbf_init_scale * mu)}, real=[wr]),
        _m(ConvTransposed(geom), ["phi", f"{wk}'"], ["reg0"], kinds={f"{wk}'": WEIGHT},
           init={f"{wk}'": constant(0.0)}),
        _m(from_linop(sel.H), ["reg0"], ["reg"]),
        _m(sense_normal(cs), ["x_n", f"{p}.coils", f"{p}.pattern"], ["ahax"]),
        _m(LinComb(ishape, [1, -1]), ["ahax", "adjy_d"], ["res"]),
        _m(RealScale(ishape), ["res", wl], ["dc"], kinds={wl: WEIGHT}, init={wl: constant(cfg.lam_init)},
           real=[wl], prox={wl: project_nonnegative}),
        _m(LinComb(ishape, [1, -1, -1]), ["x_s", "reg", "dc"], [f"x{t + 1}"]),
    ]
    step = connect(parts, share={f"x{t}": ["x_r", "x_n", "x_s"], wk: [wk, f"{wk}'"], f"{p}.adjy": ["adjy_d"]})
    if cfg.checkpoint:
        step = step.map_op(checkpoint)
    return step


def build_varnet(coil_shape, cfg: VarNetConfig | None = None) -> Model:
    """``(kspace, coils, pattern) -> image`` of the first map set.

    The iteration starts from the adjoint reconstruction ``A^H y``.
    """
    cfg = cfg or VarNetConfig()
    cfg.validate()
    cs = tuple(coil_shape)
    ishape = image_shape(cs)
    parts = [_m(sense_adjoint(cs), ["kspace", "a.coils", "a.pattern"], ["adjy"])]
    for t in range(cfg.T):
        parts.append(varnet_step(cs, cfg, t))
    parts.append(_m(from_linop(map0(ishape)), [f"x{cfg.T}"], ["image"]))
    share = {
        "coils": ["a.coils"] + [f"t{t}.coils" for t in range(cfg.T)],
        "pattern": ["a.pattern"] + [f"t{t}.pattern" for t in range(cfg.T)],
        "adjy": ["x0"] + [f"t{t}.adjy" for t in range(cfg.T)],
    }
    net = connect(parts, share=share)
    order = ["kspace", "coils", "pattern"] + [n for n in net.inputs if n not in ("kspace", "coils", "pattern")]
    return reorder(net, order)


def param_count(cfg: VarNetConfig) -> int:
    """Closed form: complex filters count twice, RBF weights and step sizes once."""
    return cfg.T * (cfg.filters * cfg.kernel**2 * 2 + cfg.filters * cfg.rbf + 1)

