"""Named-argument wrapper around an operator graph.

A :class:`Model` gives every input and output of an operator a name and
gives every input a kind: ``weight`` (trained), ``data`` (fed per batch) or
``stat`` (moving statistics, updated through a designated output).  Weights
carry an initializer, optionally a proximal map, and may be marked real.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import nlop as nl

WEIGHT = "weight"
DATA = "data"
STAT = "stat"
KINDS = (WEIGHT, DATA, STAT)


@dataclass(frozen=True)
class Init:
    """Initialization scheme for one input.

    ``glorot`` draws real and imaginary parts from ``U(-a, a)`` with
    ``a = sqrt(3 / (fan_in + fan_out))`` so that ``E|w|^2 = 2 / (fan_in +
    fan_out)``; real weights use ``a = sqrt(6 / (fan_in + fan_out))``.
    ``constant`` fills with ``value``; ``fixed`` copies ``array``.
    """

    scheme: str = "constant"
    value: complex = 0.0
    fan_in: int = 1
    fan_out: int = 1
    array: np.ndarray | None = None

    def __call__(self, shape, rng: np.random.Generator, real: bool = False) -> np.ndarray:
        if self.scheme == "constant":
            return np.full(shape, self.value, dtype=np.complex128)
        if self.scheme == "fixed":
            return np.broadcast_to(np.asarray(self.array, dtype=np.complex128), shape).copy()
        if self.scheme == "glorot":
            fans = self.fan_in + self.fan_out
            if real:
                a = np.sqrt(6.0 / fans)
                return rng.uniform(-a, a, shape).astype(np.complex128)
            a = np.sqrt(3.0 / fans)
            return rng.uniform(-a, a, shape) + 1j * rng.uniform(-a, a, shape)
        raise ValueError(f"unknown initializer {self.scheme!r}")


def glorot(fan_in, fan_out):
    return Init("glorot", fan_in=int(fan_in), fan_out=int(fan_out))


def constant(value):
    return Init("constant", value=complex(value))


def fixed(array):
    return Init("fixed", array=np.asarray(array))


def weight_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for one named weight; independent of the other weights."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def project_nonnegative(w):
    return np.maximum(w.real, 0).astype(w.dtype)


class Model:
    def __init__(self, op: nl.Nlop, inputs, outputs, kinds=None, init=None, prox=None, real=(),
                 stat_updates=None, values=None):
        inputs, outputs = list(inputs), list(outputs)
        if len(inputs) != op.num_inputs or len(outputs) != op.num_outputs:
            raise ValueError(f"names do not match the signature of {op}")
        for what, names in (("input", inputs), ("output", outputs)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {what} names: {names}")
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.kinds = {n: DATA for n in inputs}
        self.kinds.update(kinds or {})
        for n, k in self.kinds.items():
            if n not in self.inputs:
                raise KeyError(f"kind given for unknown input {n!r}")
            if k not in KINDS:
                raise ValueError(f"input {n!r}: kind must be one of {KINDS}")
        self.init = dict(init or {})
        for n in self.weight_names:
            if n not in self.init:
                raise ValueError(f"weight {n!r} has no initializer")
        self.prox: dict[str, Callable] = dict(prox or {})
        self.real = set(real)
        self.stat_updates = dict(stat_updates or {})
        for o, i in self.stat_updates.items():
            if o not in self.outputs or self.kinds.get(i) != STAT:
                raise ValueError(f"statistics update {o!r} -> {i!r} is not an output -> stat input pair")
        self.values: dict[str, np.ndarray] = {}
        for k, v in (values or {}).items():
            if k in self.inputs and self.kinds[k] != DATA:
                self.values[k] = v

    # -- lookup -----------------------------------------------------------

    def in_index(self, name) -> int:
        try:
            return self.inputs.index(name)
        except ValueError:
            raise KeyError(f"no input named {name!r}") from None

    def out_index(self, name) -> int:
        try:
            return self.outputs.index(name)
        except ValueError:
            raise KeyError(f"no output named {name!r}") from None

    def shape(self, name):
        return self.op.in_shapes[self.in_index(name)]

    def _of_kind(self, kind):
        return [n for n in self.inputs if self.kinds[n] == kind]

    @property
    def weight_names(self):
        return self._of_kind(WEIGHT)

    @property
    def data_names(self):
        return self._of_kind(DATA)

    @property
    def stat_names(self):
        return self._of_kind(STAT)

    def num_params(self) -> int:
        """Real trainable parameters; a complex weight counts twice."""
        return sum(int(np.prod(self.shape(n))) * (1 if n in self.real else 2) for n in self.weight_names)

    # -- values -----------------------------------------------------------

    def initialize(self, seed: int = 0) -> "Model":
        for n in self.weight_names:
            self.values[n] = self.init[n](self.shape(n), weight_rng(seed, n), real=n in self.real)
        for n in self.stat_names:
            init = self.init.get(n, constant(0.0))
            self.values[n] = init(self.shape(n), weight_rng(seed, n))
        return self

    def get(self, name) -> np.ndarray:
        self.in_index(name)
        if name not in self.values:
            raise KeyError(f"{name!r} has no value; call initialize() or set()")
        return self.values[name]

    def set(self, name, value) -> None:
        if self.kinds[self.inputs[self.in_index(name)]] == DATA:
            raise ValueError(f"{name!r} is a data input")
        value = np.asarray(value)
        if value.shape != self.shape(name):
            raise ValueError(f"{name!r}: shape {value.shape}, expected {self.shape(name)}")
        self.values[name] = value

    def args(self, data: dict, values: dict | None = None) -> list:
        values = self.values if values is None else values
        out = []
        for n in self.inputs:
            src = data if self.kinds[n] == DATA else values
            if n not in src:
                raise KeyError(f"missing value for {self.kinds[n]} input {n!r}")
            out.append(src[n])
        return out

    def apply(self, data: dict, values: dict | None = None, keep: bool = False) -> dict:
        xs = self.args(data, values)
        res = self.op.apply(*xs) if keep else self.op.eval(*xs)
        return dict(zip(self.outputs, res))

    def __repr__(self):
        return f"Model({self.op.name}: {self.inputs} -> {self.outputs})"

    # -- rebuilding -------------------------------------------------------

    def _derived(self, op, inputs, outputs):
        keep = set(inputs)
        return Model(op, inputs, outputs,
                     kinds={n: k for n, k in self.kinds.items() if n in keep},
                     init={n: v for n, v in self.init.items() if n in keep},
                     prox={n: v for n, v in self.prox.items() if n in keep},
                     real={n for n in self.real if n in keep},
                     stat_updates={o: i for o, i in self.stat_updates.items() if o in outputs and i in keep},
                     values=self.values)

    def map_op(self, fn) -> "Model":
        """Same signature around ``fn(op)`` (e.g. a checkpoint wrapper)."""
        op = fn(self.op)
        if op.in_shapes != self.op.in_shapes or op.out_shapes != self.op.out_shapes:
            raise ValueError("map_op must preserve the signature")
        return self._derived(op, self.inputs, self.outputs)


def _merge(a: Model, b: Model, what):
    clash = set(getattr(a, what)) & set(getattr(b, what))
    if clash:
        raise ValueError(f"{what} names collide: {sorted(clash)}")


def combine(a: Model, b: Model) -> Model:
    _merge(a, b, "inputs")
    _merge(a, b, "outputs")
    return Model(nl.combine(a.op, b.op), a.inputs + b.inputs, a.outputs + b.outputs,
                 kinds={**a.kinds, **b.kinds}, init={**a.init, **b.init}, prox={**a.prox, **b.prox},
                 real=a.real | b.real, stat_updates={**a.stat_updates, **b.stat_updates},
                 values={**a.values, **b.values})


def link(m: Model, out: str, inp: str, keep_output: bool = False) -> Model:
    oi, ii = m.out_index(out), m.in_index(inp)
    op = nl.link(m.op, oi, ii, keep_output)
    inputs = [n for n in m.inputs if n != inp]
    outputs = list(m.outputs) if keep_output else [n for n in m.outputs if n != out]
    return m._derived(op, inputs, outputs)


def chain(a: Model, b: Model, out: str = "y", inp: str = "x") -> Model:
    """Feed output ``out`` of ``a`` into input ``inp`` of ``b``.

    Only the two linked names may coincide between ``a`` and ``b``.
    """
    a = rename(a, {out: "\0out"})
    b = rename(b, {inp: "\0in"})
    return link(combine(a, b), "\0out", "\0in")


def dup(m: Model, keep: str, merge: str) -> Model:
    """Feed input ``merge`` from input ``keep`` (weight sharing)."""
    if m.kinds[keep] != m.kinds[merge]:
        raise ValueError(f"cannot share {keep!r} ({m.kinds[keep]}) with {merge!r} ({m.kinds[merge]})")
    op = nl.duplicate(m.op, m.in_index(keep), m.in_index(merge))
    return m._derived(op, [n for n in m.inputs if n != merge], m.outputs)


def rename(m: Model, mapping: dict) -> Model:
    ren = lambda n: mapping.get(n, n)  # noqa: E731
    return Model(m.op, [ren(n) for n in m.inputs], [ren(n) for n in m.outputs],
                 kinds={ren(n): k for n, k in m.kinds.items()}, init={ren(n): v for n, v in m.init.items()},
                 prox={ren(n): v for n, v in m.prox.items()}, real={ren(n) for n in m.real},
                 stat_updates={ren(o): ren(i) for o, i in m.stat_updates.items()},
                 values={ren(n): v for n, v in m.values.items()})


def del_output(m: Model, name: str) -> Model:
    op = nl.del_output(m.op, m.out_index(name))
    return m._derived(op, m.inputs, [n for n in m.outputs if n != name])


def prefix(m: Model, pre: str, keep=("x", "y")) -> Model:
    """Prefix every name except those in ``keep``."""
    return rename(m, {n: f"{pre}.{n}" for n in m.inputs + m.outputs if n not in keep})


def sequential(*models: Model) -> Model:
    """Chain fragments with data input ``x`` and output ``y``."""
    if not models:
        raise ValueError("sequential needs at least one model")
    acc = models[0]
    for m in models[1:]:
        acc = chain(acc, m)
    return acc


def connect(models, share=None) -> Model:
    """Combine ``models`` and link every output to the inputs of the same name.

    ``share`` maps a new input name to the list of inputs it feeds, which
    expresses fan-out of external inputs and of linked outputs alike.  Any
    output consumed by a link leaves the signature.
    """
    share = dict(share or {})
    acc = models[0]
    for m in models[1:]:
        acc = combine(acc, m)
    for new, names in share.items():
        names = list(names)
        keep = names[0]
        for other in names[1:]:
            acc = dup(acc, keep, other)
        acc = rename(acc, {keep: new})
    for name in [n for n in acc.outputs if n in acc.inputs]:
        acc = link(acc, name, name)
    return acc


def reorder(m: Model, inputs) -> Model:
    """Same model with its inputs listed in the given order."""
    perm = [m.in_index(n) for n in inputs]
    return m._derived(nl.permute_inputs(m.op, perm), list(inputs), m.outputs)


def reorder_outputs(m: Model, outputs) -> Model:
    perm = [m.out_index(n) for n in outputs]
    return m._derived(nl.permute_outputs(m.op, perm), m.inputs, list(outputs))
