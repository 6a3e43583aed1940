#!/usr/bin/env python3
"""Generate the default 6-user / 4-resource / M=4 SCMA codebook.

Each user occupies the two resources given by the indicator matrix. A
4-point mother constellation is placed on the two occupied resources and
rotated by a resource-specific phase per user slot, chosen so that the
64-point superposition on every resource has a large minimum distance.
Per-user average energy is normalized to 1.
"""
import argparse
import itertools
import json

import numpy as np

F = np.array([[1, 1, 1, 0, 0, 0],
              [1, 0, 0, 1, 1, 0],
              [0, 1, 0, 1, 0, 1],
              [0, 0, 1, 0, 1, 1]])
K, J = F.shape
M = 4

# Mother constellation: symbol m -> (first occupied resource, second occupied resource).
PAM = np.array([-3.0, -1.0, 1.0, 3.0])
MOTHER = np.stack([PAM, PAM[[1, 3, 0, 2]]], axis=1).astype(complex)


def build(phases):
    cw = np.zeros((J, M, K), dtype=complex)
    for j in range(J):
        occupied = np.flatnonzero(F[:, j])
        for d, k in enumerate(occupied):
            slot = list(np.flatnonzero(F[k])).index(j)
            cw[j, :, k] = MOTHER[:, d] * np.exp(1j * phases[slot])
        energy = np.mean(np.sum(np.abs(cw[j]) ** 2, axis=1))
        cw[j] /= np.sqrt(energy)
    return cw


def resource_min_distance(cw):
    best = np.inf
    for k in range(K):
        users = np.flatnonzero(F[k])
        pts = [sum(cw[u, m, k] for u, m in zip(users, combo))
               for combo in itertools.product(range(M), repeat=len(users))]
        pts = np.array(pts)
        d = np.abs(pts[:, None] - pts[None, :])
        d[np.diag_indices_from(d)] = np.inf
        best = min(best, d.min())
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="codebooks/default_6x4_m4.json")
    ap.add_argument("--grid", type=int, default=180)
    args = ap.parse_args()

    angles = np.linspace(0.0, np.pi, args.grid, endpoint=False)
    best = (-1.0, None)
    for a1 in angles:
        for a2 in angles:
            if a2 <= a1:
                continue
            dmin = resource_min_distance(build((0.0, a1, a2)))
            if dmin > best[0]:
                best = (dmin, (0.0, a1, a2))
    cw = build(best[1])
    print(f"phases={best[1]} per-resource dmin={best[0]:.6f}")

    doc = {
        "J": J, "K": K, "M": M,
        "F": F.tolist(),
        "codewords": [[[[float(repr_round(z.real)), float(repr_round(z.imag))]
                        for z in cw[j, m]] for m in range(M)] for j in range(J)],
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(dumps_compact(doc))


def dumps_compact(doc):
    """One indicator row and one codeword per line."""
    lines = ["{", f' "J": {doc["J"]},', f' "K": {doc["K"]},', f' "M": {doc["M"]},', ' "F": [']
    lines.append(",\n".join("  " + json.dumps(row) for row in doc["F"]))
    lines.append(" ],")
    lines.append(' "codewords": [')
    users = []
    for user in doc["codewords"]:
        syms = ",\n".join("   " + json.dumps(sym) for sym in user)
        users.append("  [\n" + syms + "\n  ]")
    lines.append(",\n".join(users))
    lines.append(" ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def repr_round(v):
    v = float(v)
    return 0.0 if abs(v) < 1e-15 else v


if __name__ == "__main__":
    main()
