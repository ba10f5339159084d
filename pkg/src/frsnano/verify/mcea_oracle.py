"""Scalar-loop reference for the three-branch attention module.

Deliberately naive and self-contained: plain Python lists, explicit index
loops, its own rotation, pooling, convolution and sigmoid. It must never
import from the package modules it is used to check.
"""

import math

_ORDER = ("width", "height", "channel")


def _zeros3(a, b, c):
    return [[[0.0] * c for _ in range(b)] for _ in range(a)]


def _rotate(f, branch):
    C, H, W = len(f), len(f[0]), len(f[0][0])
    if branch == "channel":
        return [[[f[c][h][w] for w in range(W)] for h in range(H)] for c in range(C)]
    if branch == "width":  # (C,H,W) -> (W,H,C)
        return [[[f[c][h][w] for c in range(C)] for h in range(H)] for w in range(W)]
    if branch == "height":  # (C,H,W) -> (H,C,W)
        return [[[f[c][h][w] for w in range(W)] for c in range(C)] for h in range(H)]
    raise ValueError(branch)


def _unrotate(r, branch, C, H, W):
    out = _zeros3(C, H, W)
    for c in range(C):
        for h in range(H):
            for w in range(W):
                if branch == "channel":
                    out[c][h][w] = r[c][h][w]
                elif branch == "width":
                    out[c][h][w] = r[w][h][c]
                else:
                    out[c][h][w] = r[h][c][w]
    return out


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def _descriptor(slab, a, b, g, pools):
    vals = [v for row in slab for v in row]
    n = len(vals)
    avg = sum(vals) / n
    std = math.sqrt(sum((v - avg) ** 2 for v in vals) / n)
    mx = vals[0]
    for v in vals:
        if v > mx:
            mx = v
    terms = {"avg": (avg, a), "std": (std, b), "max": (mx, g)}
    chosen = [terms[p] for p in pools]
    base = sum(t for t, _ in chosen) / len(chosen)
    return base + sum(w * t for t, w in chosen)


def _branch(f, branch, params, pools):
    C, H, W = len(f), len(f[0]), len(f[0][0])
    a_lat, b_lat, g_lat, kernel = params
    a, b, g = _sig(a_lat), _sig(b_lat), _sig(g_lat)
    r = _rotate(f, branch)
    L = len(r)
    desc = [_descriptor(r[m], a, b, g, pools) for m in range(L)]
    k = len(kernel)
    p = k // 2
    ex = []
    for m in range(L):
        acc = 0.0
        for t in range(k):
            j = m + t - p
            if 0 <= j < L:
                acc += kernel[t] * desc[j]
        ex.append(acc)
    gated = [[[_sig(ex[m]) * v for v in row] for row in r[m]] for m in range(L)]
    return _unrotate(gated, branch, C, H, W)


def mcea_oracle(f, branch_params, enabled=_ORDER, pools=("avg", "std", "max")):
    """Reference output for a ``C x H x W`` nested list (or array).

    ``branch_params`` maps ``"width" | "height" | "channel"`` to
    ``(alpha_latent, beta_latent, gamma_latent, kernel)``.
    """
    f = [[[float(v) for v in row] for row in ch] for ch in f]
    C, H, W = len(f), len(f[0]), len(f[0][0])
    outs = [_branch(f, b, branch_params[b], pools) for b in enabled]
    res = _zeros3(C, H, W)
    for c in range(C):
        for h in range(H):
            for w in range(W):
                total = 0.0
                for o in outs:
                    total += o[c][h][w]
                res[c][h][w] = total if len(outs) == 1 else total / len(outs)
    return res
