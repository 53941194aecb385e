"""Independent reference implementations used as test oracles.

Everything here works element by element with ``math`` on Python floats and
shares no code with the package. Weight layout follows the documented storage:
``W`` and ``U`` are (D, 4D) with column blocks f, i, o, C, and a gate
pre-activation reads ``sum_r h[r] * W[r, col] + sum_r x[r] * U[r, col] + b[col]``.
"""

import math


def sig(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def matmul_loop(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return out


def _pre(W, U, b, h, x, col):
    acc = b[col]
    for r in range(len(h)):
        acc += h[r] * W[r][col]
    if x is not None:
        for r in range(len(x)):
            acc += x[r] * U[r][col]
    return acc


def lstm_oracle(W, U, b, C, h, x):
    D = len(h)
    C_new, h_new = [], []
    for j in range(D):
        f = sig(_pre(W, U, b, h, x, j))
        i = sig(_pre(W, U, b, h, x, D + j))
        o = sig(_pre(W, U, b, h, x, 2 * D + j))
        g = math.tanh(_pre(W, U, b, h, x, 3 * D + j))
        c = f * C[j] + i * g
        C_new.append(c)
        h_new.append(o * math.tanh(c))
    return C_new, h_new


def portion_oracle(w_p, u_p, b_p, h, x):
    z = b_p
    for r in range(len(h)):
        z += w_p[r] * h[r]
    if x is not None:
        for r in range(len(x)):
            z += u_p[r] * x[r]
    return sig(z)


def thres_oracle(v, eps):
    if v < eps:
        return 0.0
    if v > 1.0 - eps:
        return 1.0
    return v


def mask_oracle(p, D, lam, eps):
    return [thres_oracle(sig(lam * (p * D - i)), eps) for i in range(1, D + 1)]


def da_oracle(cell, C, h, x, lam, eps):
    """Partial update: gate, mask, masked LSTM step, blend. Returns (C, h, p, e)."""
    D = len(h)
    p = portion_oracle([r[0] for r in cell["w_p"]], [r[0] for r in cell["u_p"]], cell["b_p"][0], h, x)
    e = mask_oracle(p, D, lam, eps)
    hs = [h[j] * e[j] for j in range(D)]
    xs = None if x is None else [x[j] * e[j] for j in range(D)]
    Cn, hn = lstm_oracle(cell["W"], cell["U"], cell["b"], C, hs, xs)
    Co = [e[j] * Cn[j] + (1.0 - e[j]) * C[j] for j in range(D)]
    ho = [e[j] * hn[j] + (1.0 - e[j]) * h[j] for j in range(D)]
    return Co, ho, p, e


def affine_oracle(x, W, b):
    return [b[c] + sum(x[r] * W[r][c] for r in range(len(x))) for c in range(len(b))]


def _cell(T, prefix):
    return {k[len(prefix):]: v for k, v in T.items() if k.startswith(prefix)}


def da_lstm_oracle(T, m, x_seq, lam, eps):
    """Straight-line unrolling of the hierarchical model over one sequence.

    ``T`` maps tensor names to nested lists. Returns per-step logits, the
    per-step portions (B_1, T, B_2..B_m) and the final bottom/top states.
    """
    D = len(T["input.b"])
    zero = [0.0] * D
    bC, bh, tC, th = zero, zero, zero, zero
    logits, portions = [], []
    for x_raw in x_seq:
        x = affine_oracle(x_raw, T["input.W"], T["input.b"])
        ps = []
        C1, h1, p, _ = da_oracle(_cell(T, "bottom.0."), bC, bh, x, lam, eps)
        ps.append(p)
        tC, th, p, _ = da_oracle(_cell(T, "top."), tC, th, h1, lam, eps)
        ps.append(p)
        C, h = C1, h1
        for k in range(1, m - 1):
            C, h, p, _ = da_oracle(_cell(T, f"bottom.{k}."), C, h, None, lam, eps)
            ps.append(p)
        C, h, p, _ = da_oracle(_cell(T, f"bottom.{m - 1}."), C, h, th, lam, eps)
        ps.append(p)
        bC, bh = C, h
        logits.append(affine_oracle(bh, T["output.W"], T["output.b"]))
        portions.append(ps)
    return logits, portions, (bC, bh), (tC, th)


def stacked_oracle(T, m, x_seq):
    D = len(T["input.b"])
    states = [([0.0] * D, [0.0] * D) for _ in range(m)]
    logits = []
    for x_raw in x_seq:
        inp = affine_oracle(x_raw, T["input.W"], T["input.b"])
        for k in range(m):
            c = _cell(T, f"bottom.{k}.")
            states[k] = lstm_oracle(c["W"], c["U"], c["b"], states[k][0], states[k][1], inp)
            inp = states[k][1]
        logits.append(affine_oracle(inp, T["output.W"], T["output.b"]))
    return logits, states


def deep_transition_oracle(T, m, x_seq):
    D = len(T["input.b"])
    C, h = [0.0] * D, [0.0] * D
    logits = []
    for x_raw in x_seq:
        x = affine_oracle(x_raw, T["input.W"], T["input.b"])
        for k in range(m):
            c = _cell(T, f"bottom.{k}.")
            C, h = lstm_oracle(c["W"], c["U"], c["b"], C, h, x if k == 0 else None)
        logits.append(affine_oracle(h, T["output.W"], T["output.b"]))
    return logits, (C, h)


def cross_entropy_oracle(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        total += -math.log(math.exp(row[y]) / sum(math.exp(v) for v in row))
    return total / len(labels)
