"""Self-checks shared by the CLI: Fock-vs-coherent agreement and kernel invariants."""
from __future__ import annotations

import numpy as np

from . import coherent, fock, kernel, nn
from .numerics import SeededRng


def random_mesh(num_modes, rng, max_depth=3):
    depth = int(rng.integers(1, max_depth + 1))
    mesh = kernel.MeshParams.rectangular(num_modes, depth)
    mesh.theta = rng.uniform(-np.pi, np.pi, mesh.num_beamsplitters)
    mesh.phi = rng.uniform(-np.pi, np.pi, mesh.num_beamsplitters)
    return mesh


def fock_apply_mesh(state, mesh):
    b = 0
    for layer in mesh.pairs:
        for pair in layer:
            gate = fock.beamsplitter_matrix(mesh.theta[b], mesh.phi[b], state.cutoff)
            state = fock.apply_two_mode(gate, pair, state)
            b += 1
    return state


def fock_displace(state, alphas):
    for k, a in enumerate(alphas):
        state = fock.apply_single_mode(fock.displacement_matrix(a, state.cutoff), k, state)
    return state


def fock_circuit_score(xi, xj, mesh, cfg, cutoff=18):
    """The kernel circuit run gate by gate in the Fock basis."""
    s = cfg.loading_scale
    state = fock.vacuum_state(cfg.num_modes, cutoff)
    state = fock_displace(state, s * np.asarray(xi))
    state = fock_displace(state, -s * np.asarray(xj))
    state = fock_apply_mesh(state, mesh)
    return fock.vacuum_probability(state, cfg.detected)


def oracle_trials(modes=(2, 3), cutoff=18, trials=100, seed=0):
    """Compare coherent and Fock vacuum probabilities; returns a list of per-trial errors."""
    rng = SeededRng(seed).child("oracle")
    errors = []
    for t in range(trials):
        r = rng.child(t)
        d = int(modes[t % len(modes)])
        alphas = r.uniform(-1.0, 1.0, d)
        mesh = random_mesh(d, r)
        detected = sorted(set(int(k) for k in r.integers(0, d, size=int(r.integers(1, d + 1)))))
        c = coherent.apply_mesh(coherent.displace_all(coherent.coherent_vacuum(d), alphas),
                                kernel.mesh_unitary(mesh))
        f = fock_apply_mesh(fock_displace(fock.vacuum_state(d, cutoff), alphas), mesh)
        errors.append(abs(coherent.vacuum_probability(c, detected) - fock.vacuum_probability(f, detected)))
    return errors


def kernel_selftest(seed=0, d=8, n=6):
    """Run the kernel invariants on random data; returns ``[(name, passed, detail)]``."""
    rng = SeededRng(seed).child("selftest")
    mesh = kernel.MeshParams.random(d, d, rng.child("mesh"), scale=np.pi)
    cfg = kernel.KernelConfig(d)
    x = rng.child("tokens").normal(size=(n, d))
    shift = rng.child("shift").normal(size=d)
    results = []

    def record(name, err, tol):
        results.append((name, bool(err <= tol), f"max error {err:.2e} (tol {tol:.0e})"))

    raw = kernel.score_matrix(x, mesh, kernel.KernelConfig(d, normalize_rows=False)).values
    record("symmetry", np.max(np.abs(raw - raw.T)), 1e-12)
    shifted = kernel.score_matrix(x + shift, mesh, cfg).values
    record("translation invariance", np.max(np.abs(shifted - kernel.score_matrix(x, mesh, cfg).values)), 1e-12)
    record("row sums", np.max(np.abs(kernel.score_matrix(x, mesh, cfg).values.sum(axis=1) - 1)), 1e-9)
    record("bounds", max(0.0, raw.max() - 1.0) + (0.0 if raw.min() > 0 else 1.0), 0.0)
    lam = np.linalg.eigvalsh(kernel.gamma_of_mesh(mesh, cfg.detected))
    record("gamma PSD", max(0.0, -lam[0]), 1e-10)
    full = kernel.KernelConfig(d, detected=tuple(range(d)))
    ident = kernel.MeshParams.rectangular(d, d)
    record("full-detection mesh invariance",
           np.max(np.abs(kernel.score_matrix(x, mesh, full).values - kernel.score_matrix(x, ident, full).values)),
           1e-12)
    gk = nn.gksam_scores(x, kernel.gamma_of_mesh(mesh, cfg.detected))
    record("classical kernel equivalence", np.max(np.abs(gk - kernel.score_matrix(x, mesh, cfg).values)), 1e-12)
    small = kernel.MeshParams.random(2, 2, rng.child("small"), scale=np.pi)
    scfg = kernel.KernelConfig(2, detected=(0,))
    xi, xj = rng.child("pair").uniform(-1, 1, (2, 2))
    record("Fock circuit agreement",
           abs(fock_circuit_score(xi, xj, small, scfg) - kernel.pgksas_exact(xi, xj, small, scfg)), 1e-6)
    return results
