"""Persistence diagrams and the distances between them.

Diagrams live on the weight scale: points are (birth, death) with birth >=
death, and infinitely-lived components enter with death 0. Both metrics let a
point match either a point of the other diagram or its own diagonal
projection.
"""
import numpy as np

import acttopo as at

a = np.array([
    [0.9, 0.0],   # an infinite component, lifetime 0.9
    [0.6, 0.5],   # short-lived: near the diagonal, cheap to ignore
    [0.8, 0.3],
])
b = np.array([
    [0.85, 0.0],
    [0.78, 0.35],
])

for q in (1.0, 2.0):
    print(f"W_{q:g}(a, b) = {at.wasserstein(a, b, q=q):.4f}")
print(f"bottleneck(a, b) = {at.bottleneck(a, b):.4f}")

# the bottleneck is the q -> infinity limit: it only sees the worst pair
print(f"\nW_8(a, b) = {at.wasserstein(a, b, q=8):.4f} (approaches the bottleneck)")

# a point close to the diagonal barely matters: removing (0.6, 0.5) moves
# the diagrams by at most its projection distance (0.6 - 0.5)/2 = 0.05
a_trimmed = a[[0, 2]]
print(f"\nW_1 after dropping the near-diagonal point: "
      f"{at.wasserstein(a_trimmed, a, q=1):.4f} (= its diagonal cost)")

# diagrams of real activation graphs: same network, two different inputs
spec = at.preset("ccff-relu")
weights = at.init_weights(spec, seed=0)
digits = at.synthetic_digits(1, seed=4)
results = []
for img, lab in zip(digits.images[:2], digits.labels[:2]):
    rec = at.forward(spec, weights, img)
    graph = at.build_induced_graph(spec, weights, rec, input_id=str(lab))
    results.append(at.persistence_of_graph(graph))

d0, d1 = (r.diagram(top_k=512) for r in results)
print(f"\ninduced diagrams: {len(d0)} and {len(d1)} points (top 512 by lifetime)")
print(f"W_2 between the digit-0 and digit-1 induced diagrams: "
      f"{at.wasserstein(d0, d1, q=2):.4f}")
print(f"bottleneck: {at.bottleneck(d0, d1):.4f}")
