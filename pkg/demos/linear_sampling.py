"""
Sampling in proportion to closeness
===================================

Rejection sampling with acceptance ``(tau - g) / tau``: uniform candidates
are kept with a probability that falls linearly to zero at distance ``tau``.
The accepted distances should then follow a density proportional to
``(tau - g)`` times the area of the level set at ``g``.
"""

import numpy as np

from implicit_sampling.fields import Sphere
from implicit_sampling.sampling import linear_weight, sample_linear, sample_uniform

shape = Sphere(0.4)
tau = 0.1
rng = np.random.default_rng(0)

# The acceptance rate is the mean weight over the unit box.
candidates = sample_uniform(200_000, rng)
w = linear_weight(shape.unsigned_distance(candidates), 1.0, tau)
print(f"acceptance rate ~ {w.mean():.4f}")

P = sample_linear(shape, 50_000, tau=tau, rng=rng)
g = shape.unsigned_distance(P)
print(f"max distance {g.max():.4f} (hard cutoff at {tau})")

# Compare each band with the analytic shell mass 4*pi*((r-g)^2 + (r+g)^2) * (tau - g).
edges = np.linspace(0, tau, 6)
fine = np.linspace(0, tau, 10_001)
dens = ((0.4 - fine) ** 2 + (0.4 + fine) ** 2) * (tau - fine)
cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
expected = np.diff(np.interp(edges, fine, cdf / cdf[-1]))
observed = np.histogram(g, bins=edges)[0] / len(g)
for lo, hi, o, e in zip(edges[:-1], edges[1:], observed, expected):
    print(f"g in [{lo:.2f}, {hi:.2f}):  observed {o:.4f}  expected {e:.4f}")
