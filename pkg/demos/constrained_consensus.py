"""
Agreeing on a point every agent can accept
==========================================

Five agents each know one polyhedron. They share a common point but nobody
knows where. Each round an agent averages its neighbours' estimates and
projects the average onto its own set. The estimates meet inside the
intersection.
"""

import numpy as np

from cmdo.algorithms import constrained_consensus_step
from cmdo.geometry import PolyhedralSet
from cmdo.graph import CommGraph, build_weights

rng = np.random.default_rng(3)

# every set contains the anchor, so the intersection is not empty
anchor = np.array([0.5, -0.25])
sets = []
for _ in range(5):
    normals = rng.normal(size=(2, 2))
    slack = rng.uniform(0.05, 0.5, size=2)
    sets.append(PolyhedralSet.from_constraints(2, [(a, "<=", a @ anchor + s) for a, s in zip(normals, slack)]))

graph = CommGraph.path(5)
w = build_weights(graph)
print("Metropolis weights on a 5-path:\n", np.round(w.entries, 3))

z = np.array([s.project(rng.normal(scale=4, size=2)) for s in sets])
for k in range(2001):
    if k in (0, 10, 50, 200, 1000, 2000):
        spread = np.ptp(z, axis=0).max()
        worst = max(s.violation(z.mean(axis=0)) for s in sets)
        print(f"k={k:>4}  disagreement {spread:.2e}  mean violates some set by {worst:.2e}")
    z = constrained_consensus_step(z, w, sets)

print("common point:", z.mean(axis=0))
