"""A small reverse-mode tape over numpy arrays.

Every primitive appends one node ``(output, inputs, adjoint_fn)`` to the tape
while computing its value. :meth:`Tape.backward` walks the nodes in reverse
and hands each node its accumulated adjoint exactly once.

Primitives are deliberately coarse (an affine map, the four LSTM gate
activations, the memory/hidden update, the soft mask, the masked blend) so
that a full BPTT pass stays cheap in interpreted Python.

A tape built with ``record=False`` only evaluates; it is what the plain
forward API uses.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, sigmoid as _sigmoid


class TapeError(RuntimeError):
    pass


class Var:
    """A value on a tape. ``index`` is None for constants."""

    __slots__ = ("value", "index")

    def __init__(self, value, index=None):
        self.value = value
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tracked(x):
    return isinstance(x, Var) and x.index is not None


class Tape:
    def __init__(self, record: bool = True):
        self.record = record
        self.nodes = []
        self._count = 0
        self._replayed = False
        self.visit_order = []

    def leaf(self, value) -> Var:
        """Register a differentiable input (a parameter)."""
        if not self.record:
            return Var(value)
        var = Var(value, self._count)
        self._count += 1
        return var

    def _push(self, value, inputs, adjoint_fn) -> Var:
        if not self.record or not any(_tracked(x) for x in inputs):
            return Var(value)
        out = Var(value, self._count)
        self._count += 1
        self.nodes.append((out.index, inputs, adjoint_fn))
        return out

    def backward(self, output: Var, seed=1.0) -> dict:
        """Propagate adjoints from ``output``; returns ``{var.index: grad}``.

        Only entries for leaves (and anything never consumed) remain in the
        returned mapping. A tape can be replayed only once.
        """
        if self._replayed:
            raise TapeError("tape already replayed")
        if not self.record:
            raise TapeError("tape was not recording")
        self._replayed = True
        adj = {}
        if _tracked(output):
            adj[output.index] = np.asarray(seed, dtype=float) * np.ones_like(output.value)
        for pos in range(len(self.nodes) - 1, -1, -1):
            out_index, inputs, adjoint_fn = self.nodes[pos]
            self.visit_order.append(pos)
            g = adj.pop(out_index, None)
            if g is None:
                continue
            grads = adjoint_fn(g)
            for x, gx in zip(inputs, grads):
                if gx is None or not _tracked(x):
                    continue
                prev = adj.get(x.index)
                adj[x.index] = gx if prev is None else prev + gx
        self.nodes = []
        return adj

    # -- primitives ---------------------------------------------------------

    def affine(self, pairs, bias=None) -> Var:
        """``sum_k x_k @ W_k + bias``; each ``x_k`` is (B, in), ``W_k`` (in, out)."""
        values = []
        out = None
        for x, w in pairs:
            xv, wv = value_of(x), value_of(w)
            if xv.shape[-1] != wv.shape[0]:
                raise DimensionError("affine shape mismatch", xv.shape, wv.shape)
            values.append((xv, wv))
            term = xv @ wv
            out = term if out is None else out + term
        if bias is not None:
            out = out + value_of(bias)
        inputs = []
        for x, w in pairs:
            inputs.extend((x, w))
        if bias is not None:
            inputs.append(bias)

        def adjoint(g):
            grads = []
            for (x, w), (xv, wv) in zip(pairs, values):
                grads.append(g @ wv.T if _tracked(x) else None)
                grads.append(xv.T @ g if _tracked(w) else None)
            if bias is not None:
                grads.append(g.sum(axis=0))
            return grads

        return self._push(out, inputs, adjoint)

    def sigmoid(self, x) -> Var:
        y = _sigmoid(value_of(x))
        return self._push(y, (x,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, x) -> Var:
        y = np.tanh(value_of(x))
        return self._push(y, (x,), lambda g: (g * (1.0 - y * y),))

    def mul(self, a, b) -> Var:
        av, bv = value_of(a), value_of(b)
        if av.shape != bv.shape:
            raise DimensionError("mul shape mismatch", av.shape, bv.shape)
        return self._push(av * bv, (a, b), lambda g: (g * bv, g * av))

    def columns(self, x, start: int, stop: int) -> Var:
        xv = value_of(x)

        def adjoint(g):
            full = np.zeros_like(xv)
            full[:, start:stop] = g
            return (full,)

        return self._push(xv[:, start:stop], (x,), adjoint)

    def lstm_activate(self, pre) -> Var:
        """Sigmoid on the f, i, o blocks and tanh on the candidate block."""
        pv = value_of(pre)
        d = pv.shape[1] // 4
        y = np.empty_like(pv)
        y[:, : 3 * d] = _sigmoid(pv[:, : 3 * d])
        y[:, 3 * d :] = np.tanh(pv[:, 3 * d :])

        def adjoint(g):
            s = y[:, : 3 * d]
            t = y[:, 3 * d :]
            return (np.concatenate([g[:, : 3 * d] * s * (1.0 - s), g[:, 3 * d :] * (1.0 - t * t)], axis=1),)

        return self._push(y, (pre,), adjoint)

    def lstm_combine(self, gates, c_prev) -> Var:
        """``C = f*C_prev + i*g``, ``h = o*tanh(C)``; output is ``[C | h]``."""
        gv, cp = value_of(gates), value_of(c_prev)
        d = cp.shape[1]
        if gv.shape[1] != 4 * d:
            raise DimensionError("gate/memory mismatch", gv.shape, cp.shape)
        f, i, o, cand = gv[:, :d], gv[:, d : 2 * d], gv[:, 2 * d : 3 * d], gv[:, 3 * d :]
        c = f * cp + i * cand
        tc = np.tanh(c)
        h = o * tc

        def adjoint(g):
            gc, gh = g[:, :d], g[:, d:]
            dc = gc + gh * o * (1.0 - tc * tc)
            dgates = np.concatenate([dc * cp, dc * cand, gh * tc, dc * i], axis=1)
            return dgates, dc * f

        return self._push(np.concatenate([c, h], axis=1), (gates, c_prev), adjoint)

    def soft_mask(self, p, size: int, sharpness: float, epsilon: float) -> Var:
        """``e_i = Thres_eps(sigmoid(sharpness * (p*size - i)))`` for i = 1..size.

        ``p`` is (B, 1); the result is (B, size). The adjoint is zero on the
        clipped branches.
        """
        pv = value_of(p)
        idx = np.arange(1, size + 1, dtype=float)
        s = _sigmoid(sharpness * (pv * size - idx))
        mid = (s >= epsilon) & (s <= 1.0 - epsilon)
        e = np.where(s < epsilon, 0.0, np.where(s > 1.0 - epsilon, 1.0, s))

        def adjoint(g):
            de = np.where(mid, sharpness * size * s * (1.0 - s), 0.0)
            return ((g * de).sum(axis=1, keepdims=True),)

        return self._push(e, (p,), adjoint)

    def blend(self, e, new, old) -> Var:
        """``E*new + (1-E)*old`` on ``[C | h]`` states, with ``E = [e | e]``."""
        ev, nv, ov = value_of(e), value_of(new), value_of(old)
        if nv.shape != ov.shape or nv.shape[1] != 2 * ev.shape[1]:
            raise DimensionError("blend shape mismatch", ev.shape, nv.shape, ov.shape)
        big = np.concatenate([ev, ev], axis=1)
        rest = 1.0 - big
        out = big * nv + rest * ov

        def adjoint(g):
            d = ev.shape[1]
            diff = g * (nv - ov)
            return diff[:, :d] + diff[:, d:], g * big, g * rest

        return self._push(out, (e, new, old), adjoint)

    def stack(self, xs) -> Var:
        out = np.stack([value_of(x) for x in xs])
        return self._push(out, tuple(xs), lambda g: tuple(g[k] for k in range(len(xs))))

    def cross_entropy(self, logits, labels) -> Var:
        """Mean negative log-softmax over every leading position.

        ``logits`` is (..., K) and ``labels`` integer ids with shape (...).
        """
        lv = value_of(logits)
        labels = np.asarray(labels)
        k = lv.shape[-1]
        if labels.shape != lv.shape[:-1]:
            raise DimensionError("label shape mismatch", lv.shape, labels.shape)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        z = lv - lv.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logp = z - logsum
        picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
        count = labels.size
        loss = -picked.sum() / count

        def adjoint(g):
            probs = np.exp(logp)
            np.put_along_axis(probs, labels[..., None], np.take_along_axis(probs, labels[..., None], axis=-1) - 1.0, axis=-1)
            return (probs * (g / count),)

        return self._push(np.asarray(loss), (logits,), adjoint)
