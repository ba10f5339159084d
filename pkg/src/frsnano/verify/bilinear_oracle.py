"""Scalar-loop bilinear sampling with the upsampler's clamping convention."""

import math


def sample_point(plane, x, y):
    """Bilinear value of a 2-D ``H x W`` nested list at continuous ``(x, y)``."""
    H, W = len(plane), len(plane[0])
    x = min(max(x, -0.5), W - 0.5)
    y = min(max(y, -0.5), H - 0.5)
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0

    def at(r, c):
        r = min(max(r, 0), H - 1)
        c = min(max(c, 0), W - 1)
        return plane[r][c]

    top = at(y0, x0) + fx * (at(y0, x0 + 1) - at(y0, x0))
    bot = at(y0 + 1, x0) + fx * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0))
    return top + fy * (bot - top)


def bilinear_oracle(x, gx, gy, groups):
    """Resample ``C x H x W`` at per-group sheets ``gx``/``gy`` of shape ``g x Ho x Wo``."""
    C = len(x)
    per = C // groups
    out = []
    for c in range(C):
        k = c // per
        plane = [[float(v) for v in row] for row in x[c]]
        sheet_x, sheet_y = gx[k], gy[k]
        out.append([
            [sample_point(plane, float(sheet_x[i][j]), float(sheet_y[i][j])) for j in range(len(sheet_x[0]))]
            for i in range(len(sheet_x))
        ])
    return out
