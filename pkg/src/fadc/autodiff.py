"""Reverse-mode differentiation tape and a finite-difference gradient checker.

Every differentiable operation in the package is registered here as a pair
(forward, backward).  Calling an operation through :func:`call` with plain
numpy arrays just runs the forward; if any input is a :class:`Var`, the
result is recorded on that variable's tape and a new :class:`Var` comes back.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class OpDef:
    forward: Callable[..., tuple[np.ndarray, dict]]
    backward: Callable[[dict, np.ndarray], Sequence[np.ndarray | None]]


REGISTRY: dict[str, OpDef] = {}


def register(kind: str, forward, backward) -> None:
    if kind in REGISTRY:
        raise ValueError(f"op {kind!r} already registered")
    REGISTRY[kind] = OpDef(forward, backward)


@dataclass
class Node:
    id: int
    kind: str
    parents: tuple[int, ...]
    # positions of the parents within the op's argument list
    slots: tuple[int, ...]
    ctx: dict
    value: np.ndarray
    name: str | None = None


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray | None:
        return self.tape.grads.get(self.id)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, kind={node.kind}, shape={self.shape})"

    def __add__(self, other):
        return call("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return call("sub", self, other)

    def __rsub__(self, other):
        return call("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return call("scale", self, alpha=float(other))
        return call("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return call("scale", self, alpha=-1.0)


class Tape:
    """Append-only record of evaluated operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(Node(len(self.nodes), "leaf", (), (), {}, arr, name))
        return Var(self, len(self.nodes) - 1)

    def record(self, kind: str, inputs: Sequence[Any], output: np.ndarray, ctx: dict) -> Var:
        """Append a node for ``kind``.

        ``inputs`` holds, per argument slot, a :class:`Var`, an integer node
        id on this tape, or a constant.  Constants receive no gradient.
        """
        if kind not in REGISTRY:
            raise KeyError(f"unknown op kind {kind!r}")
        parents, slots = [], []
        for slot, item in enumerate(inputs):
            if isinstance(item, Var):
                if item.tape is not self:
                    raise ValueError("input belongs to a different tape")
                nid = item.id
            elif isinstance(item, (int, np.integer)) and not isinstance(item, bool):
                nid = int(item)
            else:
                continue
            if not 0 <= nid < len(self.nodes):
                raise ValueError(f"parent id {nid} is not on the tape")
            parents.append(nid)
            slots.append(slot)
        node = Node(len(self.nodes), kind, tuple(parents), tuple(slots), ctx, output)
        self.nodes.append(node)
        return Var(self, node.id)

    def backward(self, root: Var) -> dict[int, np.ndarray]:
        value = root.value
        if value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {value.shape}")
        grads: dict[int, np.ndarray] = {root.id: np.ones_like(value)}
        for node in reversed(self.nodes[: root.id + 1]):
            g = grads.get(node.id)
            if g is None or not node.parents:
                continue
            parent_grads = REGISTRY[node.kind].backward(node.ctx, g)
            for pid, slot in zip(node.parents, node.slots):
                pg = parent_grads[slot]
                if pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.asarray(pg, dtype=np.float64)
        # reachable nodes without a gradient path (e.g. through constants) get zeros
        for nid in self._ancestors(root.id):
            if nid not in grads:
                grads[nid] = np.zeros_like(self.nodes[nid].value)
        self.grads = grads
        return grads

    def _ancestors(self, nid: int) -> set[int]:
        stack, seen = [nid], set()
        while stack:
            cur = stack.pop()
            if cur not in seen:
                seen.add(cur)
                stack.extend(self.nodes[cur].parents)
        return seen


def value_of(x):
    return x.value if isinstance(x, Var) else x


def call(kind: str, *inputs, **params):
    """Evaluate a registered op, recording it if any input is a :class:`Var`."""
    op = REGISTRY[kind]
    tape = next((i.tape for i in inputs if isinstance(i, Var)), None)
    values = [value_of(i) for i in inputs]
    out, ctx = op.forward(*values, **params)
    if tape is None:
        return out
    return tape.record(kind, [i if isinstance(i, Var) else None for i in inputs], out, ctx)


# elementwise basics live here because the tape's operator overloads need them

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_shapes(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return a, b, a.shape, b.shape


def _add_fwd(a, b):
    a, b, sa, sb = _binary_shapes(a, b)
    return a + b, {"sa": sa, "sb": sb}


def _add_bwd(ctx, g):
    return _unbroadcast(g, ctx["sa"]), _unbroadcast(g, ctx["sb"])


def _sub_fwd(a, b):
    a, b, sa, sb = _binary_shapes(a, b)
    return a - b, {"sa": sa, "sb": sb}


def _sub_bwd(ctx, g):
    return _unbroadcast(g, ctx["sa"]), -_unbroadcast(g, ctx["sb"])


def _mul_fwd(a, b):
    a, b, _, _ = _binary_shapes(a, b)
    return a * b, {"a": a, "b": b}


def _mul_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _scale_fwd(a, alpha):
    return alpha * np.asarray(a, dtype=np.float64), {"alpha": alpha}


def _scale_bwd(ctx, g):
    return (ctx["alpha"] * g,)


def _sum_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    return np.array(a.sum()), {"shape": a.shape}


def _sum_bwd(ctx, g):
    return (np.full(ctx["shape"], float(g)),)


register("add", _add_fwd, _add_bwd)
register("sub", _sub_fwd, _sub_bwd)
register("mul", _mul_fwd, _mul_bwd)
register("scale", _scale_fwd, _scale_bwd)
register("sum", _sum_fwd, _sum_bwd)


def total(x):
    """Sum of all entries (scalar)."""
    return call("sum", x)


# ---------------------------------------------------------------- gradcheck


def rel_err(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Entrywise |a - f| / max(1e-8, |a|, |f|)."""
    return np.abs(a - f) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(f)))


def leaf_rel_err(a: np.ndarray, f: np.ndarray) -> float:
    """max |a - f| / max(1e-8, max |a|, max |f|) over one leaf.

    The entrywise ratio is not usable as a pass criterion: an entry whose
    true gradient sits near zero is swamped by the round-off of f itself
    (about eps * |f| / step), whatever the implementation.
    """
    a, f = np.asarray(a, dtype=np.float64), np.asarray(f, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(1e-8, float(np.abs(a).max()), float(np.abs(f).max()))
    return float(np.abs(a - f).max() / scale)


@dataclass
class LeafReport:
    leaf: str
    max_rel_err: float
    entry_rel_err: float = float("nan")  # worst entrywise ratio, diagnostic only


@dataclass
class GradcheckReport:
    op: str
    tol: float
    leaves: list[LeafReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.max_rel_err <= self.tol for r in self.leaves)

    def rows(self) -> list[tuple[str, str, float, str]]:
        return [
            (self.op, r.leaf, r.max_rel_err, "pass" if r.max_rel_err <= self.tol else "fail")
            for r in self.leaves
        ]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["op", "leaf", "max_rel_err", "result"])
        for op, leaf, err, res in self.rows():
            w.writerow([op, leaf, f"{err:.9g}", res])
        return buf.getvalue()


def analytic_grads(f: Callable[[Mapping[str, Any]], Any], leaves: Mapping[str, np.ndarray]):
    tape = Tape()
    vars_ = {k: tape.leaf(v, name=k) for k, v in leaves.items()}
    out = f(vars_)
    if not isinstance(out, Var):
        raise TypeError("function did not produce a taped scalar")
    grads = tape.backward(out)
    return float(out.value), {k: grads.get(v.id, np.zeros_like(v.value)) for k, v in vars_.items()}


def numeric_grads(f, leaves: Mapping[str, np.ndarray], step: float = 1e-6):
    """Central differences, evaluated through the untaped forward path."""
    base = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}
    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(base))
            flat[i] = orig - step
            fm = float(f(base))
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * step)
        out[name] = g
    return out


def gradcheck(
    f: Callable[[Mapping[str, Any]], Any],
    leaves: Mapping[str, np.ndarray],
    step: float = 1e-6,
    tol: float = 1e-5,
    op: str = "f",
    near_kink: Callable[[str, np.ndarray], np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    margin: float = 1e-4,
) -> GradcheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``near_kink(name, value)`` may return a boolean mask of entries lying
    within ``margin`` of a non-differentiable point; those entries are
    resampled (a small random nudge) before checking.
    """
    leaves = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}
    if near_kink is not None:
        rng = rng or np.random.default_rng(0)
        for name, arr in leaves.items():
            for _ in range(100):
                bad = np.asarray(near_kink(name, arr), dtype=bool)
                if not bad.any():
                    break
                arr[bad] += rng.uniform(2 * margin, 50 * margin, size=int(bad.sum())) * rng.choice([-1, 1], size=int(bad.sum()))
    _, ana = analytic_grads(f, leaves)
    num = numeric_grads(f, leaves, step)
    report = GradcheckReport(op, tol)
    for name in leaves:
        ent = rel_err(ana[name], num[name])
        report.leaves.append(LeafReport(name, leaf_rel_err(ana[name], num[name]),
                                        float(ent.max()) if ent.size else 0.0))
    return report


def collect_rows(reports: Iterable[GradcheckReport]) -> str:
    reports = list(reports)
    return "".join(r.to_csv(header=(i == 0)) for i, r in enumerate(reports))
