"""Mini-batch training loop over a model with a scalar loss output."""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .. import mdarray
from ..autodiff.nlop import walk
from ..nn.layers import Dropout
from ..nn.losses import loss as make_loss
from ..nn.model import Model, chain
from .steps import AdamState, IPALMState, NonFiniteError, TrainConfig, adam_step, check_finite, clip_gradients, \
    ipalm_step, sgd_step


@dataclass
class TrainResult:
    values: dict
    history: list = field(default_factory=list)
    steps: int = 0


def attach_loss(net: Model, kind: str = "mse", output: str = "image", reference: str = "reference", **kw) -> Model:
    """``net`` with ``output`` fed into a loss against a new data input."""
    shape = net.op.out_shapes[net.out_index(output)]
    lm = Model(make_loss(kind, shape, **kw), ["x", reference], ["loss"])
    return chain(net, lm, output, "x")


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation of the dataset for one epoch; depends only on (seed, epoch)."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def _set_step(model: Model, step: int):
    for node in walk(model.op):
        if isinstance(node, Dropout):
            node.step = step


class _Replica:
    """Evaluates loss, weight gradients and statistics updates for one model."""

    def __init__(self, model: Model, loss_name: str):
        self.m = model
        self.loss_idx = model.out_index(loss_name)
        self.w_idx = [model.in_index(n) for n in model.weight_names]

    def run(self, data, values, names):
        m = self.m
        out = m.op.apply(*m.args(data, values))
        loss = out[self.loss_idx]
        if not np.all(np.isfinite(loss)):
            raise NonFiniteError(f"non-finite loss {loss.ravel()[0]}")
        idx = [m.in_index(n) for n in names]
        g = m.op.backward({self.loss_idx: np.ones_like(loss)}, idx)
        grads = {}
        for n, i in zip(names, idx):
            gi = g[i]
            grads[n] = gi.real.astype(gi.dtype) if n in m.real else gi
        stats = {m.stat_updates[o]: out[m.out_index(o)] for o in m.stat_updates}
        return float(loss.real.ravel()[0]), grads, stats


def _data_batch_size(model: Model, batch_axis: int) -> int:
    sizes = {model.shape(n)[batch_axis] for n in model.data_names}
    if len(sizes) != 1:
        raise ValueError(f"data inputs disagree on the batch dimension: {sizes}")
    return sizes.pop()


def train(models, dataset: dict, cfg: TrainConfig, loss: str = "loss", batch_axis: int = -1,
          log=print, on_epoch=None) -> TrainResult:
    """Train the weights of ``models`` on ``dataset``.

    ``models`` is one model or a list of replicas with identical weight
    names; each replica takes a contiguous share of every batch and the
    replica gradients are averaged in list order.  ``dataset`` maps each
    data input to an array stacking the samples along ``batch_axis``.  The
    weights are read from (and written back to) the first model's values,
    which are initialized from ``cfg.seed`` if empty.  ``on_epoch(epoch,
    values)`` is called after every epoch with the current values.
    """
    cfg.validate()
    models = [models] if isinstance(models, Model) else list(models)
    lead = models[0]
    if not lead.values:
        lead.initialize(cfg.seed)
    values = dict(lead.values)
    names = lead.weight_names
    reps = [_Replica(m, loss) for m in models]
    b = _data_batch_size(lead, batch_axis)
    if cfg.batch_size != b * len(models):
        raise ValueError(f"batch size {cfg.batch_size} != {len(models)} replicas x {b}")
    sizes = {np.shape(v)[batch_axis] for v in dataset.values()}
    if len(sizes) != 1:
        raise ValueError(f"dataset arrays disagree on the number of samples: {sizes}")
    n = sizes.pop()
    steps_per_epoch = n // cfg.batch_size if cfg.drop_last else -(-n // cfg.batch_size)
    if steps_per_epoch == 0 and cfg.epochs > 0:
        raise ValueError(f"dataset of {n} samples is smaller than one batch of {cfg.batch_size}")

    adam = {k: AdamState.zeros(lead.shape(k)) for k in names}
    ipalm = IPALMState()
    history = []
    step = 0
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and len(reps) > 1 else None
    limit = threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()
    with limit, mdarray.options(deterministic=cfg.deterministic):
        try:
            for epoch in range(cfg.epochs):
                order = batch_order(n, cfg.seed, epoch)
                if not cfg.drop_last:
                    need = steps_per_epoch * cfg.batch_size - n
                    order = np.concatenate([order, order[:need]])
                losses = []
                for s in range(steps_per_epoch):
                    idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
                    shards = [{k: np.take(v, idx[r * b:(r + 1) * b], axis=batch_axis) for k, v in dataset.items()}
                              for r in range(len(reps))]
                    for m in models:
                        _set_step(m, step)

                    def evaluate(point, wanted):
                        jobs = [lambda r=r, d=d: r.run(d, point, wanted) for r, d in zip(reps, shards)]
                        res = list(pool.map(lambda f: f(), jobs)) if pool else [f() for f in jobs]
                        lval = sum(r[0] for r in res) / len(res)
                        grads = {k: sum(r[1][k] for r in res) / len(res) for k in wanted}
                        stats = {k: sum(r[2][k] for r in res) / len(res) for k in res[0][2]}
                        return lval, grads, stats

                    if cfg.algorithm == "ipalm":
                        seen = {}

                        def grad_fn(point, wanted):
                            lval, grads, stats = evaluate({**values, **point}, wanted)
                            seen.setdefault("loss", lval)
                            seen.setdefault("stats", stats)
                            return _clip(grads, cfg)

                        new, ipalm = ipalm_step({k: values[k] for k in names}, grad_fn, ipalm, cfg, lead.prox)
                        lval, stats = seen["loss"], seen["stats"]
                        values.update(new)
                    else:
                        lval, grads, stats = evaluate(values, names)
                        grads = _clip(grads, cfg)
                        for k in names:
                            check_finite(k, grads[k])
                            if cfg.algorithm == "sgd":
                                w = sgd_step(values[k], grads[k], cfg.lr)
                            else:
                                w, adam[k] = adam_step(values[k], grads[k], adam[k], cfg)
                            values[k] = lead.prox[k](w) if k in lead.prox else w
                    values.update(stats)
                    losses.append(lval)
                    step += 1
                mean = float(np.mean(losses))
                history.append(mean)
                if cfg.verbose and log is not None:
                    log(f"epoch {epoch + 1} loss {mean:.8e}")
                if on_epoch is not None:
                    on_epoch(epoch + 1, dict(values))
        finally:
            if pool:
                pool.shutdown()
            for m in models:
                m.op.reset_state()
    lead.values.update(values)
    return TrainResult(values, history, step)


def _clip(grads, cfg):
    return clip_gradients(grads, cfg.clip_norm) if cfg.clip_norm else grads
