"""
Fock simulation against the coherent closed form
================================================

Displace a few modes, run them through a random beamsplitter mesh, and ask
for the probability that a subset of detectors sees no photons.  The Fock
simulator does this gate by gate in a truncated photon-number basis; the
coherent backend only tracks one complex amplitude per mode.
"""

import numpy as np

from pgket import coherent, fock
from pgket.checks import fock_apply_mesh, fock_displace, random_mesh
from pgket.kernel import mesh_unitary
from pgket.numerics import SeededRng

rng = SeededRng(0)
d, cutoff = 3, 18
alphas = rng.uniform(-1, 1, d)
mesh = random_mesh(d, rng)
print("displacements:", np.round(alphas, 3))
print("mesh depth:", mesh.depth, "beamsplitters:", mesh.num_beamsplitters)

# Fock route: 19**3 amplitudes, every gate an exact unitary on the truncated space
state = fock_apply_mesh(fock_displace(fock.vacuum_state(d, cutoff), alphas), mesh)
print("probability lost to truncation:", f"{state.leakage:.2e}")

# coherent route: the mesh acts on the amplitude vector as a d x d unitary
c = coherent.apply_mesh(coherent.displace_all(coherent.coherent_vacuum(d), alphas), mesh_unitary(mesh))

for subset in ([0], [0, 2], [0, 1, 2]):
    pf = fock.vacuum_probability(state, subset)
    pc = coherent.vacuum_probability(c, subset)
    print(f"vacuum on {subset}: fock {pf:.12f}  coherent {pc:.12f}  diff {abs(pf - pc):.1e}")

# the photon-count statistics agree as well: each output mode is Poisson
counts = coherent.sample_counts(c, rng.child("shots"), 20_000)
dist = fock.photon_distribution(state)
for k in range(d):
    print(f"mode {k}: mean photons sampled {counts[:, k].mean():.3f}, "
          f"from Fock marginal {np.dot(np.arange(cutoff + 1), fock.marginal(dist, k)):.3f}")
