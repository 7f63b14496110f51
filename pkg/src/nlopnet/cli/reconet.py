"""Training and applying reconstruction networks on arrays in reconstruction layout."""

from __future__ import annotations

import numpy as np

from ..nn.layers import INFER, TRAIN
from ..optim import TrainConfig, attach_loss, train
from ..recon.modl import ModlConfig, build_modl
from ..recon.normalize import normalize_kspace
from ..recon.sense import BATCH, COIL, check_binary, estimate_pattern
from ..recon.varnet import VarNetConfig, build_varnet

NETWORKS = ("varnet", "modl")

_DEFAULTS = {
    "varnet": {"T": 10, "filters": 24, "kernel": 11, "rbf": 31},
    "modl": {"T": 10, "layers": 5, "filters": 32, "kernel": 3, "cg_iter": 10},
}


class ConfigError(ValueError):
    """Invalid or incompatible network configuration."""


def network_config(network: str, **overrides) -> dict:
    if network not in NETWORKS:
        raise ConfigError(f"unknown network {network!r}; choose from {NETWORKS}")
    cfg = dict(_DEFAULTS[network])
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in cfg:
            raise ConfigError(f"option {k!r} does not apply to {network}")
        cfg[k] = v
    return cfg


def build_network(network: str, coil_shape, config: dict, mode=TRAIN):
    try:
        if network == "varnet":
            return build_varnet(coil_shape, VarNetConfig(**config))
        if network == "modl":
            c = dict(config)
            return build_modl(coil_shape, ModlConfig(cg_iter=c.pop("cg_iter"), **c), mode=mode)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown network {network!r}")


def prepare(kspace, coils, pattern=None, normalize=False):
    """Pattern (estimated if absent, broadcast over slices) and per-slice scale.

    Returns ``(kspace, coils, pattern, scale)`` with k-space already scaled.
    """
    kspace = np.asarray(kspace, dtype=np.complex128)
    coils = np.asarray(coils, dtype=np.complex128)
    if pattern is None:
        pattern = estimate_pattern(kspace)
    pattern = np.asarray(pattern, dtype=np.complex128)
    check_binary(pattern)
    pshape = list(kspace.shape)
    pshape[COIL] = 1
    pattern = np.broadcast_to(pattern, pshape).copy()
    scale = np.ones((1, 1, 1, 1, kspace.shape[BATCH]))
    if normalize:
        scale, kspace = normalize_kspace(kspace, coils, pattern)
    return kspace, coils, pattern, scale


def _coil_shape(coils, batch):
    s = list(coils.shape)
    s[BATCH] = batch
    return tuple(s)


def reconet_train(kspace, coils, reference, network: str, config: dict, tcfg: TrainConfig, pattern=None,
                  normalize=False, log=print, on_epoch=None):
    """Train and return ``(model, history)``; the model holds weights and statistics."""
    kspace, coils, pattern, scale = prepare(kspace, coils, pattern, normalize)
    reference = np.asarray(reference, dtype=np.complex128) * scale
    replicas = max(1, tcfg.threads)
    if tcfg.batch_size % replicas:
        raise ConfigError(f"batch size {tcfg.batch_size} is not divisible by {replicas} threads")
    cs = _coil_shape(coils, tcfg.batch_size // replicas)
    models = [attach_loss(build_network(network, cs, config, TRAIN), "mse", "image", "reference")
              for _ in range(replicas)]
    models[0].initialize(tcfg.seed)
    res = train(models, {"kspace": kspace, "coils": coils, "pattern": pattern, "reference": reference}, tcfg,
                batch_axis=BATCH, log=log, on_epoch=on_epoch)
    return models[0], res.history


def reconet_apply(kspace, coils, values: dict, network: str, config: dict, pattern=None, normalize=False,
                  chunk: int = 8):
    """Reconstruct every slice; returns the first-map-set image ``(X, Y, 1, 1, N)``."""
    kspace, coils, pattern, scale = prepare(kspace, coils, pattern, normalize)
    n = kspace.shape[BATCH]
    out = []
    nets = {}
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        b = sl.stop - sl.start
        if b not in nets:
            nets[b] = build_network(network, _coil_shape(coils, b), config, INFER)
        net = nets[b]
        missing = [k for k in net.inputs if k not in net.data_names and k not in values]
        if missing:
            raise ConfigError(f"weights lack {missing[:3]}{'...' if len(missing) > 3 else ''}")
        data = {"kspace": kspace[..., sl], "coils": coils[..., sl], "pattern": pattern[..., sl]}
        out.append(net.apply(data, values)["image"])
    img = np.concatenate(out, axis=BATCH)
    return img / scale
