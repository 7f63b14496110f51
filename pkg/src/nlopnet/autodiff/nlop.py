"""Non-linear operators with derivatives, and their composition.

An :class:`Nlop` maps ``I`` input arrays to ``O`` output arrays.  After a
call to :meth:`Nlop.apply` the derivative ``D_i F_o`` (and its adjoint) can be
applied; it is always evaluated at the inputs of that most recent call.  Each
``apply`` bumps a generation counter, and derivative handles created for one
generation refuse to run against another.

Complex inputs are treated as pairs of reals.  For operators that are not
holomorphic the adjoint derivative is the transpose of the real Jacobian, so
``Re<DF dx, dy> = Re<dx, DF^H dy>`` holds for every operator.

Composite operators are :class:`Graph` instances: a directed acyclic graph of
atomic nodes.  The forward derivative propagates tangents in topological
order; the adjoint runs in reverse order and sums cotangents wherever a value
fans out.
"""

from __future__ import annotations

from types import SimpleNamespace
from typing import Iterable, Sequence

import numpy as np

from .linop import Linop


class StaleDerivativeError(RuntimeError):
    """A derivative was requested for a forward call that is no longer current."""


class NoForwardError(StaleDerivativeError):
    """A derivative was requested before any forward call."""


class EvalState(SimpleNamespace):
    """Values an atomic operator keeps from its last forward call."""


def _shape(s):
    return tuple(int(d) for d in s)


def as_complex(x) -> np.ndarray:
    if x is None:
        raise ValueError("uninitialized input")
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return x
    return x.astype(np.complex128 if x.dtype == np.float64 else np.complex64)


class Nlop:
    """Base class for atomic operators, graphs and containers."""

    holomorphic = False

    def __init__(self, in_shapes: Sequence, out_shapes: Sequence, name: str | None = None):
        self.in_shapes = tuple(_shape(s) for s in in_shapes)
        self.out_shapes = tuple(_shape(s) for s in out_shapes)
        self.name = name or type(self).__name__
        self.generation = 0

    @property
    def num_inputs(self) -> int:
        return len(self.in_shapes)

    @property
    def num_outputs(self) -> int:
        return len(self.out_shapes)

    def __repr__(self):
        return f"{self.name}({list(self.in_shapes)} -> {list(self.out_shapes)})"

    # -- forward ----------------------------------------------------------

    def _inputs(self, xs):
        if len(xs) != self.num_inputs:
            raise ValueError(f"{self.name}: expected {self.num_inputs} inputs, got {len(xs)}")
        out = []
        for k, (x, s) in enumerate(zip(xs, self.in_shapes)):
            x = as_complex(x)
            if x.shape != s:
                raise ValueError(f"{self.name}: input {k} has shape {x.shape}, expected {s}")
            out.append(x)
        return out

    def apply(self, *xs) -> tuple:
        """Evaluate and keep what the derivatives need."""
        return tuple(self._run(self._inputs(xs), keep=True))

    def eval(self, *xs) -> tuple:
        """Evaluate without touching the derivative state."""
        return tuple(self._run(self._inputs(xs), keep=False))

    def __call__(self, *xs):
        out = self.apply(*xs)
        return out[0] if len(out) == 1 else out

    def _run(self, xs, keep: bool):
        raise NotImplementedError

    def children(self) -> list["Nlop"]:
        return []

    def reset_state(self) -> None:
        """Drop stored derivative data (the generation counter is kept)."""

    # -- derivatives ------------------------------------------------------

    def depends(self, o: int, i: int) -> bool:
        return True

    def _fwd_deriv(self, dxs: dict, outs: Iterable[int]) -> dict:
        raise NotImplementedError

    def _bwd(self, dys: dict, ins: Iterable[int]) -> dict:
        raise NotImplementedError

    def _require_forward(self):
        if self.generation == 0:
            raise NoForwardError(f"{self.name}: derivative requested before any forward call")

    def _check_pair(self, o, i):
        if not (0 <= o < self.num_outputs and 0 <= i < self.num_inputs):
            raise IndexError(f"{self.name}: no derivative D_{i}F_{o}")

    def forward_deriv(self, dxs: dict, outs: Iterable[int] | None = None) -> dict:
        """Tangents of the requested outputs for input tangents ``dxs``."""
        self._require_forward()
        outs = range(self.num_outputs) if outs is None else list(outs)
        dxs = {int(i): as_complex(v) for i, v in dxs.items()}
        for i, v in dxs.items():
            if v.shape != self.in_shapes[i]:
                raise ValueError(f"{self.name}: tangent {i} has shape {v.shape}, expected {self.in_shapes[i]}")
        res = self._fwd_deriv(dxs, outs)
        dt = _dtype_of(dxs.values())
        return {o: res[o] if o in res else np.zeros(self.out_shapes[o], dt) for o in outs}

    def backward(self, dys: dict, ins: Iterable[int] | None = None) -> dict:
        """Adjoint derivative: cotangents of the requested inputs."""
        self._require_forward()
        ins = range(self.num_inputs) if ins is None else list(ins)
        dys = {int(o): as_complex(v) for o, v in dys.items()}
        for o, v in dys.items():
            if v.shape != self.out_shapes[o]:
                raise ValueError(f"{self.name}: cotangent {o} has shape {v.shape}, expected {self.out_shapes[o]}")
        res = self._bwd(dys, ins)
        dt = _dtype_of(dys.values())
        return {i: res[i] if i in res else np.zeros(self.in_shapes[i], dt) for i in ins}

    def deriv(self, o: int, i: int, dx):
        self._check_pair(o, i)
        return self.forward_deriv({i: dx}, [o])[o]

    def adjoint(self, o: int, i: int, dy):
        self._check_pair(o, i)
        return self.backward({o: dy}, [i])[i]

    def derivative(self, o: int = 0, i: int = 0) -> Linop:
        """``D_i F_o`` at the last forward call, as a linop bound to that call."""
        self._check_pair(o, i)
        self._require_forward()
        gen = self.generation

        def check():
            if self.generation != gen:
                raise StaleDerivativeError(
                    f"{self.name}: derivative handle from call {gen}, operator is at call {self.generation}")

        def fwd(dx):
            check()
            return self.deriv(o, i, dx)

        def adj(dy):
            check()
            return self.adjoint(o, i, dy)

        return Linop(self.in_shapes[i], self.out_shapes[o], fwd, adj,
                     complex_linear=self.holomorphic, name=f"D{i}{self.name}{o}")


def _dtype_of(arrays):
    dt = np.complex64
    for a in arrays:
        dt = np.result_type(dt, a.dtype)
    return dt


class AtomicNlop(Nlop):
    """Operator defined by ``_forward`` plus per-pair ``_deriv``/``_adjoint``.

    Subclasses write whatever the derivatives need into the state object
    passed to ``_forward``; it is kept only by :meth:`apply`.
    """

    def __init__(self, in_shapes, out_shapes, name=None):
        super().__init__(in_shapes, out_shapes, name)
        self._state: EvalState | None = None

    def _forward(self, st: EvalState, *xs):
        raise NotImplementedError

    def _deriv(self, st: EvalState, o: int, i: int, dx):
        raise NotImplementedError

    def _adjoint(self, st: EvalState, o: int, i: int, dy):
        raise NotImplementedError

    def _run(self, xs, keep):
        st = EvalState()
        out = self._forward(st, *xs)
        if not isinstance(out, tuple):
            out = (out,)
        if keep:
            self.generation += 1
            st.generation = self.generation
            self._state = st
        return out

    def reset_state(self):
        self._state = None

    def _st(self):
        self._require_forward()
        if self._state is None:
            raise StaleDerivativeError(f"{self.name}: derivative state was discarded")
        return self._state

    def _fwd_deriv(self, dxs, outs):
        st = self._st()
        res = {}
        for o in outs:
            acc = None
            for i, dx in dxs.items():
                if dx is None or not self.depends(o, i):
                    continue
                v = self._deriv(st, o, i, dx)
                acc = v if acc is None else acc + v
            if acc is not None:
                res[o] = acc
        return res

    def _bwd(self, dys, ins):
        st = self._st()
        res = {}
        for i in ins:
            acc = None
            for o, dy in dys.items():
                if dy is None or not self.depends(o, i):
                    continue
                v = self._adjoint(st, o, i, dy)
                acc = v if acc is None else acc + v
            if acc is not None:
                res[i] = acc
        return res


# -- graphs -----------------------------------------------------------------


class Graph(Nlop):
    """Acyclic composition of operator nodes.

    ``inputs[j]`` lists the node ports fed by external input ``j`` (more than
    one after :func:`duplicate`), ``outputs[o]`` is the node port exposed as
    external output ``o`` and ``edges`` maps a node input port to the node
    output port feeding it.
    """

    def __init__(self, nodes, inputs, outputs, edges, name="graph"):
        self.nodes = list(nodes)
        if len({id(n) for n in self.nodes}) != len(self.nodes):
            raise ValueError("an operator instance may appear only once in a graph; build a fresh copy")
        self.inputs = [list(map(tuple, ports)) for ports in inputs]
        self.outputs = [tuple(p) for p in outputs]
        self.edges = {tuple(k): tuple(v) for k, v in edges.items()}
        in_shapes = []
        for ports in self.inputs:
            shapes = {self.nodes[n].in_shapes[p] for n, p in ports}
            if len(shapes) != 1:
                raise ValueError(f"external input feeds ports of different shapes: {shapes}")
            in_shapes.append(shapes.pop())
        out_shapes = [self.nodes[n].out_shapes[p] for n, p in self.outputs]
        super().__init__(in_shapes, out_shapes, name)

        self._feed = {}
        for j, ports in enumerate(self.inputs):
            for port in ports:
                self._feed[port] = ("x", j)
        for dst, src in self.edges.items():
            if dst in self._feed:
                raise ValueError(f"node port {dst} is fed twice")
            if self.nodes[src[0]].out_shapes[src[1]] != self.nodes[dst[0]].in_shapes[dst[1]]:
                raise ValueError(f"shape mismatch on edge {src} -> {dst}")
            self._feed[dst] = ("e", src)
        for n, node in enumerate(self.nodes):
            for p in range(node.num_inputs):
                if (n, p) not in self._feed:
                    raise ValueError(f"input {p} of node {node.name} is not connected")
        self._order = self._toposort()
        self._gens = None
        self._dep = None

    def _toposort(self):
        preds = {n: set() for n in range(len(self.nodes))}
        for dst, src in self.edges.items():
            preds[dst[0]].add(src[0])
        order, mark = [], {}

        def visit(n):
            state = mark.get(n)
            if state == 1:
                raise ValueError("link would create a cycle")
            if state == 2:
                return
            mark[n] = 1
            for m in sorted(preds[n]):
                visit(m)
            mark[n] = 2
            order.append(n)

        for n in range(len(self.nodes)):
            visit(n)
        return order

    def children(self):
        return list(self.nodes)

    def reset_state(self):
        for node in self.nodes:
            node.reset_state()

    def _run(self, xs, keep):
        vals = {}
        for n in self._order:
            node = self.nodes[n]
            args = []
            for p in range(node.num_inputs):
                kind, ref = self._feed[(n, p)]
                args.append(xs[ref] if kind == "x" else vals[ref])
            outs = node._run(args, keep)
            for o, v in enumerate(outs):
                vals[(n, o)] = v
        if keep:
            self.generation += 1
            self._gens = [node.generation for node in self.nodes]
        return [vals[p] for p in self.outputs]

    def _check_fresh(self):
        if self._gens is None:
            raise NoForwardError(f"{self.name}: derivative requested before any forward call")
        for node, g in zip(self.nodes, self._gens):
            if node.generation != g:
                raise StaleDerivativeError(
                    f"{self.name}: node {node.name} was re-evaluated outside this graph")

    def dependency(self):
        """Boolean matrix ``dep[o, i]``: output ``o`` structurally depends on input ``i``."""
        if self._dep is None:
            reach = {}
            for n in self._order:
                node = self.nodes[n]
                port_dep = []
                for p in range(node.num_inputs):
                    kind, ref = self._feed[(n, p)]
                    port_dep.append({ref} if kind == "x" else reach[ref])
                for o in range(node.num_outputs):
                    s = set()
                    for p in range(node.num_inputs):
                        if node.depends(o, p):
                            s |= port_dep[p]
                    reach[(n, o)] = s
            dep = np.zeros((self.num_outputs, self.num_inputs), dtype=bool)
            for o, port in enumerate(self.outputs):
                for i in reach[port]:
                    dep[o, i] = True
            self._dep = dep
        return self._dep

    def depends(self, o, i):
        return bool(self.dependency()[o, i])

    def _needed(self, outs):
        """Node output ports that can influence the requested outputs."""
        need = {self.outputs[o] for o in outs}
        for n in reversed(self._order):
            node = self.nodes[n]
            mine = [o for o in range(node.num_outputs) if (n, o) in need]
            if not mine:
                continue
            for p in range(node.num_inputs):
                if any(node.depends(o, p) for o in mine):
                    kind, ref = self._feed[(n, p)]
                    if kind == "e":
                        need.add(ref)
        return need

    def _relevant(self, ins):
        """Node ports whose value depends on the requested inputs."""
        ins = set(ins)
        rel_in, rel_out = set(), set()
        for n in self._order:
            node = self.nodes[n]
            for p in range(node.num_inputs):
                kind, ref = self._feed[(n, p)]
                if (kind == "x" and ref in ins) or (kind == "e" and ref in rel_out):
                    rel_in.add((n, p))
            for o in range(node.num_outputs):
                if any((n, p) in rel_in and node.depends(o, p) for p in range(node.num_inputs)):
                    rel_out.add((n, o))
        return rel_in

    def _fwd_deriv(self, dxs, outs):
        self._check_fresh()
        outs = list(outs)
        need = self._needed(outs)
        tan = {}
        for n in self._order:
            node = self.nodes[n]
            want = [o for o in range(node.num_outputs) if (n, o) in need]
            if not want:
                continue
            din = {}
            for p in range(node.num_inputs):
                kind, ref = self._feed[(n, p)]
                t = dxs.get(ref) if kind == "x" else tan.get(ref)
                if t is not None:
                    din[p] = t
            if not din:
                continue
            for o, v in node._fwd_deriv(din, want).items():
                tan[(n, o)] = v
        return {o: tan[self.outputs[o]] for o in outs if self.outputs[o] in tan}

    def _bwd(self, dys, ins):
        self._check_fresh()
        ins = list(ins)
        rel = self._relevant(ins)
        cot = {}
        for o, dy in dys.items():
            port = self.outputs[o]
            cot[port] = dy if port not in cot else cot[port] + dy
        res = {}
        for n in reversed(self._order):
            node = self.nodes[n]
            dout = {o: cot.pop((n, o)) for o in range(node.num_outputs) if (n, o) in cot}
            if not dout:
                continue
            want = [p for p in range(node.num_inputs) if (n, p) in rel]
            if not want:
                continue
            for p, g in node._bwd(dout, want).items():
                kind, ref = self._feed[(n, p)]
                tgt = res if kind == "x" else cot
                tgt[ref] = g if ref not in tgt else tgt[ref] + g
        return {i: res[i] for i in ins if i in res}


def as_graph(f: Nlop) -> Graph:
    if isinstance(f, Graph):
        return f
    return Graph([f], [[(0, i)] for i in range(f.num_inputs)], [(0, o) for o in range(f.num_outputs)], {},
                 name=f.name)


def combine(f: Nlop, g: Nlop) -> Graph:
    """Stack inputs and outputs: ``(x_f, x_g) -> (f(x_f), g(x_g))``."""
    a, b = as_graph(f), as_graph(g)
    k = len(a.nodes)
    shift = lambda port: (port[0] + k, port[1])  # noqa: E731
    return Graph(a.nodes + b.nodes,
                 a.inputs + [[shift(p) for p in ports] for ports in b.inputs],
                 a.outputs + [shift(p) for p in b.outputs],
                 {**a.edges, **{shift(d): shift(s) for d, s in b.edges.items()}},
                 name=f"({a.name},{b.name})")


def link(h: Nlop, out_idx: int, in_idx: int, keep_output: bool = False) -> Graph:
    """Feed output ``out_idx`` into input ``in_idx``; both leave the signature.

    With ``keep_output`` the output stays exposed as well (fan-out).
    """
    g = as_graph(h)
    if not 0 <= out_idx < g.num_outputs or not 0 <= in_idx < g.num_inputs:
        raise IndexError(f"link({out_idx}, {in_idx}) out of range for {g}")
    if g.out_shapes[out_idx] != g.in_shapes[in_idx]:
        raise ValueError(f"link: output shape {g.out_shapes[out_idx]} != input shape {g.in_shapes[in_idx]}")
    src = g.outputs[out_idx]
    edges = dict(g.edges)
    for dst in g.inputs[in_idx]:
        edges[dst] = src
    inputs = [ports for j, ports in enumerate(g.inputs) if j != in_idx]
    outputs = list(g.outputs) if keep_output else [p for o, p in enumerate(g.outputs) if o != out_idx]
    return Graph(g.nodes, inputs, outputs, edges, name=g.name)


def duplicate(h: Nlop, in_i: int, in_j: int) -> Graph:
    """Merge input ``in_j`` into input ``in_i``; both are fed the same value."""
    g = as_graph(h)
    if in_i == in_j or not (0 <= in_i < g.num_inputs and 0 <= in_j < g.num_inputs):
        raise IndexError(f"duplicate({in_i}, {in_j}) invalid for {g}")
    if g.in_shapes[in_i] != g.in_shapes[in_j]:
        raise ValueError("duplicate: inputs differ in shape")
    inputs = [list(p) for p in g.inputs]
    inputs[in_i] = inputs[in_i] + inputs[in_j]
    del inputs[in_j]
    return Graph(g.nodes, inputs, g.outputs, g.edges, name=g.name)


def chain(f: Nlop, g: Nlop) -> Graph:
    """``g o f`` for single-output ``f`` feeding the first input of ``g``."""
    if f.num_outputs != 1:
        raise ValueError("chain needs a single-output first operator; use link for general plumbing")
    if f.out_shapes[0] != g.in_shapes[0]:
        raise ValueError(f"chain: {f.out_shapes[0]} does not match {g.in_shapes[0]}")
    return link(combine(f, g), 0, f.num_inputs)


def permute_inputs(h: Nlop, perm: Sequence[int]) -> Graph:
    g = as_graph(h)
    if sorted(perm) != list(range(g.num_inputs)):
        raise ValueError(f"not a permutation: {perm}")
    return Graph(g.nodes, [g.inputs[p] for p in perm], g.outputs, g.edges, name=g.name)


def permute_outputs(h: Nlop, perm: Sequence[int]) -> Graph:
    g = as_graph(h)
    if sorted(perm) != list(range(g.num_outputs)):
        raise ValueError(f"not a permutation: {perm}")
    return Graph(g.nodes, g.inputs, [g.outputs[p] for p in perm], g.edges, name=g.name)


def del_output(h: Nlop, out_idx: int) -> Graph:
    """Drop an output from the signature; its value is still computed."""
    g = as_graph(h)
    return Graph(g.nodes, g.inputs, [p for o, p in enumerate(g.outputs) if o != out_idx], g.edges, name=g.name)


# -- containers -------------------------------------------------------------


class Checkpoint(Nlop):
    """Recompute the wrapped operator's derivative state on demand.

    The forward pass stores only the inputs.  Every derivative call re-runs
    the inner forward on them first and drops the state again afterwards;
    :attr:`reexecutions` counts those re-runs.
    """

    def __init__(self, inner: Nlop):
        super().__init__(inner.in_shapes, inner.out_shapes, name=f"checkpoint({inner.name})")
        self.inner = inner
        self.holomorphic = inner.holomorphic
        self.reexecutions = 0
        self._saved = None

    def children(self):
        return [self.inner]

    def depends(self, o, i):
        return self.inner.depends(o, i)

    def reset_state(self):
        self._saved = None
        self.inner.reset_state()

    def _run(self, xs, keep):
        if keep:
            self._saved = [np.array(x, copy=True) for x in xs]
            self.generation += 1
        return list(self.inner._run(xs, keep=False))

    def _recompute(self):
        if self._saved is None:
            raise NoForwardError(f"{self.name}: derivative requested before any forward call")
        self.inner._run(self._saved, keep=True)
        self.reexecutions += 1

    def _fwd_deriv(self, dxs, outs):
        self._recompute()
        try:
            return self.inner._fwd_deriv(dxs, outs)
        finally:
            self.inner.reset_state()

    def _bwd(self, dys, ins):
        self._recompute()
        try:
            return self.inner._bwd(dys, ins)
        finally:
            self.inner.reset_state()


def checkpoint(f: Nlop) -> Checkpoint:
    return Checkpoint(f)


def walk(f: Nlop):
    """Yield ``f`` and every operator nested inside it."""
    yield f
    for c in f.children():
        yield from walk(c)


def gradient(f: Nlop, *xs, wrt: Sequence[int] | None = None):
    """``DF^H(1)`` for a real scalar-valued ``f`` at ``xs``.

    The real part is the gradient with respect to the real parts of the
    inputs, the imaginary part the one with respect to the imaginary parts.
    Returns a list aligned with ``wrt`` (default: all inputs).
    """
    if f.num_outputs != 1 or int(np.prod(f.out_shapes[0])) != 1:
        raise ValueError(f"gradient needs a scalar output, {f.name} has {list(f.out_shapes)}")
    out = f.apply(*xs)[0]
    wrt = list(range(f.num_inputs)) if wrt is None else list(wrt)
    g = f.backward({0: np.ones_like(out)}, wrt)
    return [g[i] for i in wrt]
