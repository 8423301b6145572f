import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgket import kernel
from pgket.autodiff import numerical_grad
from pgket.checks import fock_circuit_score
from pgket.errors import ShapeError, UnsupportedModeError, ValidationError
from pgket.kernel import KernelConfig, MeshParams
from pgket.nn import gksam_scores
from pgket.numerics import SeededRng


def rand_mesh(d, rng, depth=None):
    return MeshParams.random(d, depth, rng, scale=np.pi)


def test_alternating_pairs():
    assert kernel.alternating_pairs(5, 3) == (((0, 1), (2, 3)), ((1, 2), (3, 4)), ((0, 1), (2, 3)))
    assert kernel.alternating_pairs(1, 2) == ((), ())


def test_mesh_validation():
    with pytest.raises(ValidationError):
        MeshParams(4, (((0, 1), (1, 2)),), [0.1, 0.2], [0.0, 0.0])
    with pytest.raises(ValidationError):
        MeshParams(3, (((0, 1),),), [0.1, 0.2], [0.0])
    with pytest.raises(ValidationError):
        MeshParams(3, (((0, 1),),), [np.nan], [0.0])


def test_mesh_unitary_examples(rng):
    np.testing.assert_array_equal(kernel.mesh_unitary(MeshParams.rectangular(5)), np.eye(5))
    m = MeshParams.rectangular(2, 1, theta=[np.pi / 2], phi=[0.0])
    np.testing.assert_allclose(kernel.mesh_unitary(m), [[0, -1], [1, 0]], atol=1e-16)
    u = kernel.mesh_unitary(rand_mesh(7, rng))
    assert np.max(np.abs(u.conj().T @ u - np.eye(7))) < 1e-12


def test_mesh_unitary_layer_order():
    # layer 0 couples (0,1), layer 1 couples (1,2): a photon in mode 0 reaches mode 2
    m = MeshParams.rectangular(3, 2, theta=[np.pi / 2, np.pi / 2], phi=[0, 0])
    u = kernel.mesh_unitary(m)
    assert abs(abs(u[2, 0]) - 1) < 1e-14


def test_records_round_trip(rng):
    m = rand_mesh(5, rng, 4)
    back = MeshParams.from_records(5, m.records())
    assert back.pairs == m.pairs
    assert np.array_equal(back.theta, m.theta) and np.array_equal(back.phi, m.phi)


def test_gamma_of_mesh(rng):
    ident = MeshParams.rectangular(4)
    np.testing.assert_array_equal(kernel.gamma_of_mesh(ident, range(4)), np.eye(4))
    np.testing.assert_array_equal(kernel.gamma_of_mesh(ident, [0]), np.diag([1.0, 0, 0, 0]))
    m = rand_mesh(6, rng)
    assert np.max(np.abs(kernel.gamma_of_mesh(m, range(6)) - np.eye(6))) < 1e-10
    g = kernel.gamma_of_mesh(m, [0, 1])
    assert np.max(np.abs(g - g.T)) < 1e-12
    lam = np.linalg.eigvalsh(g)
    assert lam[0] >= -1e-10
    assert np.sum(lam > 1e-9) <= 4


def test_pgksas_exact_examples(rng):
    cfg = KernelConfig(4)
    x = rng.normal(size=4)
    assert kernel.pgksas_exact(x, x, rand_mesh(4, rng), cfg) == 1.0
    full = KernelConfig(4, detected=range(4))
    z = np.array([1.0, 1.0, 0.0, 0.0])
    assert abs(kernel.pgksas_exact(z, np.zeros(4), MeshParams.rectangular(4), full) - math.exp(-1)) < 1e-15
    a, b = rng.normal(size=4), rng.normal(size=4)
    m = rand_mesh(4, rng)
    assert abs(kernel.pgksas_exact(a, b, m, full) - kernel.pgksas_exact(a, b, MeshParams.rectangular(4), full)) < 1e-12
    with pytest.raises(ShapeError):
        kernel.pgksas_exact(np.zeros(3), np.zeros(4), m, cfg)


def test_pgksas_exact_gamma_form(rng):
    m = rand_mesh(5, rng)
    cfg = KernelConfig(5, detected=(0, 3))
    a, b = rng.normal(size=5), rng.normal(size=5)
    z = a - b
    expected = math.exp(-0.5 * z @ kernel.gamma_of_mesh(m, (0, 3)) @ z)
    assert abs(kernel.pgksas_exact(a, b, m, cfg) - expected) < 1e-14


def test_score_bounds_and_symmetry(rng):
    m = rand_mesh(6, rng)
    cfg = KernelConfig(6)
    for _ in range(20):
        a, b = rng.normal(size=6), rng.normal(size=6)
        s = kernel.pgksas_exact(a, b, m, cfg)
        assert 0 < s <= 1
        assert s == pytest.approx(kernel.pgksas_exact(b, a, m, cfg), abs=1e-15)


def test_strict_inequality_for_positive_definite_gamma(rng):
    cfg = KernelConfig(3, detected=range(3))
    assert kernel.pgksas_exact(np.array([1e-3, 0, 0]), np.zeros(3), rand_mesh(3, rng), cfg) < 1


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite),
       arrays(np.float64, 4, elements=st.floats(-20, 20)), st.integers(0, 1000))
def test_translation_invariance(a, b, c, seed):
    m = rand_mesh(4, SeededRng(seed))
    cfg = KernelConfig(4)
    assert abs(kernel.pgksas_exact(a + c, b + c, m, cfg) - kernel.pgksas_exact(a, b, m, cfg)) < 1e-12


def test_scalar_weighted_mode(rng):
    cfg = KernelConfig(3, score_mode="scalar", scalar_weight=0.4)
    assert cfg.detected == (0, 1, 2)
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert abs(kernel.pgksas_exact(a, b, rand_mesh(3, rng), cfg) - 0.4 * math.exp(-0.5 * np.sum((a - b) ** 2))) < 1e-15
    x = rng.normal(size=(4, 3))
    vals = kernel.score_matrix(x, rand_mesh(3, rng), cfg).values
    ref = kernel.score_matrix(x, rand_mesh(3, rng), KernelConfig(3, detected=range(3))).values
    np.testing.assert_allclose(vals, ref, atol=1e-15)


def test_kernel_config_validation():
    with pytest.raises(ValidationError):
        KernelConfig(3, detected=())
    with pytest.raises(ValidationError):
        KernelConfig(3, loading_scale=0)
    with pytest.raises(ValidationError):
        KernelConfig(3, backend="shots", shots=0)
    assert KernelConfig(5).detected == (0, 1, 2)


def test_pgksas_shots(rng):
    cfg = KernelConfig(3, backend="shots", shots=16)
    m = rand_mesh(3, rng)
    x = rng.normal(size=3)
    assert kernel.pgksas_shots(x, x, m, cfg, rng) == 1.0
    for t in range(20):
        est = kernel.pgksas_shots(x, rng.normal(size=3), m, cfg, rng.child(t))
        assert (est * 16) == int(est * 16)


def test_score_matrix_examples(rng):
    cfg = KernelConfig(1, detected=(0,))
    same = kernel.score_matrix(np.ones((5, 1)), MeshParams.rectangular(1), cfg)
    np.testing.assert_allclose(same.values, np.full((5, 5), 0.2))
    two = kernel.score_matrix(np.array([[0.0], [math.sqrt(2)]]), MeshParams.rectangular(1), cfg)
    e = math.exp(-1)
    np.testing.assert_allclose(two.values[0], [1 / (1 + e), e / (1 + e)], atol=1e-15)
    assert two.values[0, 0] == pytest.approx(0.7311, abs=5e-5)
    m = rand_mesh(8, rng)
    x = rng.normal(size=(6, 8))
    cfg8 = KernelConfig(8)
    np.testing.assert_allclose(kernel.score_matrix(x, m, cfg8).values,
                               gksam_scores(x, kernel.gamma_of_mesh(m, cfg8.detected)), atol=1e-12)
    raw = kernel.score_matrix(x, m, KernelConfig(8, normalize_rows=False)).values
    assert np.max(np.abs(raw - raw.T)) == 0.0


def test_shot_score_matrix_degenerate_rows(rng):
    cfg = KernelConfig(2, detected=(0, 1), backend="shots", shots=1)
    x = np.array([[0.0, 0.0], [40.0, 0.0]])
    # self-pairs always click vacuum, so rows cannot vanish; drop the diagonal by hand
    raw = np.array([[0.0, 0.0], [0.5, 0.5]])
    vals, bad = kernel.normalize_rows(raw)
    assert bad == [0]
    np.testing.assert_array_equal(vals[0], [0.5, 0.5])
    sm = kernel.score_matrix(x, MeshParams.rectangular(2), cfg, rng)
    np.testing.assert_array_equal(sm.values, np.eye(2))
    assert sm.provenance == "shots"


def test_shot_score_matrix_reproducible(rng):
    cfg = KernelConfig(4, backend="shots", shots=16)
    m = rand_mesh(4, rng)
    x = rng.normal(size=(5, 4)) * 0.5
    a = kernel.score_matrix(x, m, cfg, SeededRng(3)).values
    b = kernel.score_matrix(x, m, cfg, SeededRng(3)).values
    assert np.array_equal(a, b)


def test_shot_estimator_convergence(rng):
    d = 3
    m = rand_mesh(d, rng)
    a, b = np.array([0.7, -0.2, 0.4]), np.array([-0.3, 0.5, 0.1])
    p = kernel.pgksas_exact(a, b, m, KernelConfig(d))
    for shots in (100, 1000, 10_000):
        cfg = KernelConfig(d, backend="shots", shots=shots)
        est = np.array([kernel.pgksas_shots(a, b, m, cfg, rng.child(shots, t)) for t in range(200)])
        sd = math.sqrt(p * (1 - p) / shots)
        assert abs(est.mean() - p) < 4 * sd / math.sqrt(200)
        assert abs(est.std() - sd) < 0.25 * sd


def test_grad_pgksas_zero_at_coincidence(rng):
    m = rand_mesh(4, rng)
    x = rng.normal(size=4)
    g = kernel.grad_pgksas(x, x, m, KernelConfig(4))
    for v in g.values():
        assert np.max(np.abs(v), initial=0.0) == 0.0


def test_grad_pgksas_one_mode():
    z = 0.8
    g = kernel.grad_pgksas(np.array([z]), np.array([0.0]), MeshParams.rectangular(1), KernelConfig(1))
    assert abs(g["xi"][0] + z * math.exp(-z * z / 2)) < 1e-15
    assert abs(g["xj"][0] - z * math.exp(-z * z / 2)) < 1e-15


@pytest.mark.parametrize("detected", [(0,), (0, 2), (1, 2, 3)])
def test_grad_pgksas_finite_differences(rng, detected):
    d = 5
    m = rand_mesh(d, rng, 4)
    cfg = KernelConfig(d, detected=detected)
    a, b = rng.normal(size=d) * 0.6, rng.normal(size=d) * 0.6
    g = kernel.grad_pgksas(a, b, m, cfg)

    def with_angles(theta, phi):
        return kernel.pgksas_exact(a, b, MeshParams(d, m.pairs, theta, phi), cfg)

    fd = {
        "theta": numerical_grad(lambda t: with_angles(t, m.phi), m.theta),
        "phi": numerical_grad(lambda p: with_angles(m.theta, p), m.phi),
        "xi": numerical_grad(lambda x: kernel.pgksas_exact(x, b, m, cfg), a),
        "xj": numerical_grad(lambda x: kernel.pgksas_exact(a, x, m, cfg), b),
    }
    for name, ref in fd.items():
        np.testing.assert_allclose(g[name], ref, rtol=1e-4, atol=1e-6, err_msg=name)


def test_grad_pgksas_rejects_shots(rng):
    cfg = KernelConfig(2, backend="shots")
    with pytest.raises(UnsupportedModeError):
        kernel.grad_pgksas(np.zeros(2), np.ones(2), MeshParams.rectangular(2), cfg)


def test_score_matrix_vjp_finite_differences(rng):
    d, n = 4, 3
    m = rand_mesh(d, rng, 3)
    cfg = KernelConfig(d, detected=(0, 1))
    x = rng.normal(size=(n, d)) * 0.7
    w = rng.normal(size=(n, n))
    raw = kernel.raw_scores_exact(x, m, cfg)
    gx, gth, gph = kernel.score_matrix_vjp(x, m, cfg, raw, w)

    def loss(xx, th, ph):
        return float(np.sum(w * kernel.score_matrix(xx, MeshParams(d, m.pairs, th, ph), cfg).values))

    np.testing.assert_allclose(gx, numerical_grad(lambda v: loss(v, m.theta, m.phi), x), rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(gth, numerical_grad(lambda v: loss(x, v, m.phi), m.theta), rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(gph, numerical_grad(lambda v: loss(x, m.theta, v), m.phi), rtol=1e-4, atol=1e-6)


def test_literal_fock_circuit_matches(rng):
    for t in range(5):
        m = rand_mesh(2, rng.child(t), 2)
        cfg = KernelConfig(2, detected=(0,))
        a, b = rng.child("x", t).uniform(-1, 1, (2, 2))
        assert abs(fock_circuit_score(a, b, m, cfg) - kernel.pgksas_exact(a, b, m, cfg)) < 1e-6
