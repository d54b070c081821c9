"""Independent re-evaluation of the Gaussian-mixture benchmark.

Reads gaussian_mixture.toml (flat `key = value` lines with JSON-compatible
values) and writes gaussian_mixture_probes.csv: five fixed probe points and
the function value and gradient at each, evaluated straight from the formula

    f(x) = sum_j w_j exp(-|B_j^T (x - c_j)|^2 / (2 s_j^2))

Usage: python3 mixture_probes.py
"""

import json
import math
import os

HERE = os.path.dirname(os.path.abspath(__file__))


def load_params(path):
    params = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = line.split("=", 1)
            params[key.strip()] = json.loads(value.strip())
    return params


def probe_points(p):
    # Three formula-defined points in [0, 1]^dim plus two points next to
    # the first two centers, where the function is far from zero.
    dim = p["dim"]
    pts = []
    for k in range(3):
        pts.append([(math.sin(1.7 * (i + 1) + 0.9 * k) + 1.0) / 2.0 for i in range(dim)])
    for j in range(2):
        pts.append([c + 0.01 * math.cos(i + j) for i, c in enumerate(p["centers"][j])])
    return pts


def evaluate(x, p):
    y = 0.0
    grad = [0.0] * len(x)
    for c, cols, s, w in zip(p["centers"], p["projections"], p["widths"], p["weights"]):
        diff = [xi - ci for xi, ci in zip(x, c)]
        proj = [sum(b * d for b, d in zip(col, diff)) for col in cols]
        q = sum(v * v for v in proj)
        term = w * math.exp(-q / (2.0 * s * s))
        y += term
        for col, pk in zip(cols, proj):
            for i, b in enumerate(col):
                grad[i] += -term / (s * s) * pk * b
    return y, grad


def main():
    p = load_params(os.path.join(HERE, "gaussian_mixture.toml"))
    dim = p["dim"]
    rows = []
    for x in probe_points(p):
        y, g = evaluate(x, p)
        rows.append(x + [y] + g)
    header = [f"x_{i}" for i in range(1, dim + 1)] + ["y"] + [f"g_{i}" for i in range(1, dim + 1)]
    with open(os.path.join(HERE, "gaussian_mixture_probes.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(v) for v in r) + "\n")


if __name__ == "__main__":
    main()
