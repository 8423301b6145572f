"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria".
"""
import json
import math
import time

import numpy as np
import pytest

from pgket import autodiff as ad
from pgket import checkpoint, data, kernel, nn
from pgket import train as tr
from pgket.checks import fock_circuit_score, oracle_trials, random_mesh
from pgket.experiment import ExperimentConfig, noise_compare, read_metrics, run_experiment
from pgket.kernel import KernelConfig, MeshParams
from pgket.numerics import SeededRng


def report_and_assert(report, number, title, checks):
    """``checks`` maps a label to ``(passed, detail)``."""
    passed = all(ok for ok, _ in checks.values())
    detail = "; ".join(f"{k}: {d}" for k, (_, d) in checks.items())
    report(number, title, passed, detail)
    print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} | {detail}")
    failed = [k for k, (ok, _) in checks.items() if not ok]
    assert not failed, f"failed checks: {failed}"


def test_01_backend_oracle_equivalence(acceptance_report):
    start = time.perf_counter()
    errors = oracle_trials(modes=(2, 3), cutoff=18, trials=100, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(errors)
    report_and_assert(acceptance_report, 1, "coherent vs Fock vacuum probability", {
        "trials": (len(errors) == 100, f"{len(errors)}"),
        "max error <= 1e-6": (worst <= 1e-6, f"{worst:.2e}"),
        "runtime": (True, f"{elapsed:.1f}s"),
    })


def test_02_literal_circuit(acceptance_report):
    rng = SeededRng(2)
    worst = 0.0
    for t in range(50):
        cfg = KernelConfig(2, detected=(0,))
        mesh = random_mesh(2, rng.child("mesh", t))
        xi, xj = rng.child("x", t).uniform(-1, 1, (2, 2))
        worst = max(worst, abs(fock_circuit_score(xi, xj, mesh, cfg, cutoff=18) - kernel.pgksas_exact(xi, xj, mesh, cfg)))
    report_and_assert(acceptance_report, 2, "Fock circuit D(Xi) D(-Xj) mesh vacuum = exact score", {
        "50 trials, max error <= 1e-6": (worst <= 1e-6, f"{worst:.2e}"),
    })


def test_03_kernel_closed_form(acceptance_report):
    rng = SeededRng(3)
    d = 16
    full = KernelConfig(d, detected=range(d))
    ident = MeshParams.rectangular(d)
    worst = 0.0
    for t in range(1000):
        a, b = rng.child(t).normal(size=(2, d)) * 0.4
        worst = max(worst, abs(kernel.pgksas_exact(a, b, ident, full) - math.exp(-0.5 * np.sum((a - b) ** 2))))
    a, b = rng.child("inv").normal(size=(2, d)) * 0.4
    scores = [kernel.pgksas_exact(a, b, MeshParams.random(d, d, rng.child("mesh", m), scale=np.pi), full)
              for m in range(10)]
    spread = max(scores) - min(scores)
    report_and_assert(acceptance_report, 3, "identity mesh gives exp(-|Xi-Xj|^2/2); S = all is mesh invariant", {
        "1000 pairs <= 1e-12": (worst <= 1e-12, f"{worst:.2e}"),
        "10 meshes spread < 1e-12": (spread < 1e-12, f"{spread:.2e}"),
    })


def test_04_gksam_pgksam_equivalence(acceptance_report):
    rng = SeededRng(4)
    d, n = 16, 8
    worst = 0.0
    for t in range(100):
        r = rng.child(t)
        k = int(r.integers(1, d + 1))
        detected = tuple(sorted(r.permutation(d)[:k].tolist()))
        cfg = KernelConfig(d, detected=detected)
        mesh = MeshParams.random(d, int(r.integers(1, d + 1)), r, scale=np.pi)
        x = r.normal(size=(n, d)) * 0.5
        photonic = kernel.score_matrix(x, mesh, cfg).values
        classical = nn.gksam_scores(x, kernel.gamma_of_mesh(mesh, detected))
        worst = max(worst, float(np.max(np.abs(photonic - classical))))
    report_and_assert(acceptance_report, 4, "exact PGKSAM scores = GKSAM with the effective Gamma", {
        "100 configs, max entry error <= 1e-12": (worst <= 1e-12, f"{worst:.2e}"),
    })


def test_05_score_properties(acceptance_report):
    rng = SeededRng(5)
    d, n = 16, 8
    row_err, shift_exact, shift_float, min_eig = 0.0, True, 0.0, np.inf
    for t in range(100):
        r = rng.child(t)
        mesh = MeshParams.random(d, d, r, scale=np.pi)
        cfg = KernelConfig(d)
        # inputs and shift on a dyadic grid make X + c exact in floating point
        x = np.round(r.normal(size=(n, d)) * 1024) / 2048
        c = float(r.integers(-8, 9))
        base = kernel.score_matrix(x, mesh, cfg).values
        row_err = max(row_err, float(np.max(np.abs(base.sum(axis=1) - 1))))
        shift_exact &= bool(np.array_equal(kernel.score_matrix(x + c, mesh, cfg).values, base))
        y = r.normal(size=(n, d))
        cf = r.normal(size=d) * 3
        shift_float = max(shift_float, float(np.max(np.abs(
            kernel.score_matrix(y + cf, mesh, cfg).values - kernel.score_matrix(y, mesh, cfg).values))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(kernel.gamma_of_mesh(mesh, cfg.detected))[0]))
    report_and_assert(acceptance_report, 5, "row sums, translation invariance, Gamma PSD", {
        "row sums within 1e-9": (row_err <= 1e-9, f"{row_err:.2e}"),
        "shared shift bit-exact": (shift_exact, str(shift_exact)),
        "general shift": (shift_float <= 1e-12, f"{shift_float:.2e}"),
        "min eigenvalue >= -1e-10": (min_eig >= -1e-10, f"{min_eig:.2e}"),
    })


def test_06_shot_statistics(acceptance_report):
    rng = SeededRng(6)
    d = 4
    mesh = MeshParams.random(d, d, rng.child("mesh"), scale=np.pi)
    cfg = KernelConfig(d)
    xi, xj = np.array([0.6, -0.3, 0.2, 0.5]), np.array([-0.2, 0.4, 0.1, -0.3])
    p = kernel.pgksas_exact(xi, xj, mesh, cfg)
    shots = KernelConfig(d, backend="shots", shots=10_000)
    band = 4 * math.sqrt(p * (1 - p) / 10_000)
    inside = sum(abs(kernel.pgksas_shots(xi, xj, mesh, shots, rng.child("big", t)) - p) <= band for t in range(100))
    sixteen = KernelConfig(d, backend="shots", shots=16)
    est = [kernel.pgksas_shots(xi, xj, mesh, sixteen, rng.child("16", t)) for t in range(10_000)]
    bias = abs(float(np.mean(est)) - p)
    report_and_assert(acceptance_report, 6, "shot estimator accuracy and unbiasedness", {
        "p in [0.1, 0.9]": (0.1 <= p <= 0.9, f"{p:.4f}"),
        ">= 95/100 within 4 sigma": (inside >= 95, f"{inside}/100"),
        "16-shot mean within 0.01": (bias <= 0.01, f"{bias:.2e}"),
    })


def _fd_check(build, inputs, rng):
    out = build(*[ad.Tensor(x) for x in inputs])
    w = rng.normal(size=out.shape)
    tensors = [ad.Tensor(x, requires_grad=True) for x in inputs]
    ad.sum(ad.mul(build(*tensors), w)).backward()
    ok = True
    for k, t in enumerate(tensors):
        def f(v, k=k):
            return float(np.sum(build(*[ad.Tensor(v if i == k else x) for i, x in enumerate(inputs)]).data * w))

        ok &= bool(np.allclose(t.grad, ad.numerical_grad(f, inputs[k]), rtol=1e-4, atol=1e-6))
    return ok


def test_07_gradient_suite(acceptance_report):
    start = time.perf_counter()
    rng = SeededRng(7)
    d = 4
    mesh = MeshParams.random(d, 3, rng.child("mesh"), scale=np.pi)
    kcfg = KernelConfig(d)
    x = rng.normal(size=(2, 2, d)) * 0.6
    a = rng.normal(size=(d, d)) * 0.5
    mask = nn.causal_mask(2)
    labels = np.array([0, 2])
    primitives = {
        "add": (ad.add, [rng.normal(size=(2, d)), rng.normal(size=d)]),
        "sub": (ad.sub, [rng.normal(size=(2, d)), rng.normal(size=d)]),
        "mul": (ad.mul, [rng.normal(size=(2, d)), rng.normal(size=d)]),
        "div": (ad.div, [rng.normal(size=(2, d)), rng.uniform(1, 2, d)]),
        "matmul": (ad.matmul, [x, rng.normal(size=(d, 3))]),
        "relu": (ad.relu, [rng.normal(size=(2, d)) + 0.05]),
        "exp": (ad.exp, [rng.normal(size=(2, d))]),
        "log": (ad.log, [rng.uniform(0.5, 2, (2, d))]),
        "sum": (lambda t: ad.sum(t, axis=-1), [x]),
        "mean": (lambda t: ad.mean(t, axis=-2), [x]),
        "reshape": (lambda t: ad.reshape(t, (4, d)), [x]),
        "transpose": (lambda t: ad.transpose(t, (1, 0, 2)), [x]),
        "softmax": (lambda t: ad.softmax(t, mask), [rng.normal(size=(2, 2))]),
        "layer_norm": (ad.layer_norm, [x, rng.normal(size=d), rng.normal(size=d)]),
        "cross_entropy": (lambda t: ad.cross_entropy(t, labels), [rng.normal(size=(2, 3))]),
        "gaussian_scores": (ad.gaussian_scores, [x, a.T @ a]),
        "photonic_scores": (lambda t, th, ph: ad.photonic_scores(t, th, ph, mesh.pairs, kcfg),
                            [x, mesh.theta, mesh.phi]),
    }
    checks = {name: (_fd_check(fn, inputs, rng.child(name)), "ok") for name, (fn, inputs) in primitives.items()}
    for name in list(checks):
        if not checks[name][0]:
            checks[name] = (False, "mismatch")

    model = nn.EncoderClassifier(nn.ModelConfig(n_tokens=2, d=d, classes=3, mesh_depth=3), rng=rng.child("model"))
    for k in ("layer0.mesh.theta", "layer0.mesh.phi"):
        model.params[k] = rng.child(k).uniform(-np.pi, np.pi, model.params[k].shape)
    xs = rng.normal(size=(3, 2, d))
    ys = np.array([0, 1, 2])
    _, grads = tr.loss_and_grads(model, xs, ys)
    e2e = True
    for name, value in model.params.items():
        fd = ad.numerical_grad(lambda v, name=name: tr.loss_and_grads(model, xs, ys, {**model.params, name: v})[0],
                               value)
        e2e &= bool(np.allclose(grads[name], fd, rtol=1e-4, atol=1e-6))
    elapsed = time.perf_counter() - start
    checks["end-to-end encoder loss"] = (e2e, "ok" if e2e else "mismatch")
    checks["runtime < 60 s"] = (elapsed < 60, f"{elapsed:.1f}s")
    report_and_assert(acceptance_report, 7, "finite-difference gradient suite", checks)


@pytest.fixture(scope="session")
def experiment_runs(digits_dir, tmp_path_factory):
    """Two clean runs at the default protocol and one paired clean/noisy comparison."""
    root = tmp_path_factory.mktemp("runs")
    cfg = ExperimentConfig(data_dir=str(digits_dir), seed=0)
    start = time.perf_counter()
    first = run_experiment(cfg, root / "clean_a")
    clean_seconds = time.perf_counter() - start
    second = run_experiment(cfg, root / "clean_b")
    compare = noise_compare(cfg, root / "compare", sigma=0.4)
    return {"root": root, "cfg": cfg, "first": first, "second": second, "compare": compare,
            "clean_seconds": clean_seconds}


def test_08_desk_scale_experiment(acceptance_report, experiment_runs):
    s = experiment_runs["first"]
    root = experiment_runs["root"]
    rows = read_metrics(root / "clean_a" / "metrics.csv")
    ratio = s["final_train_loss"] / s["first_train_loss"]
    same = (root / "clean_a" / "metrics.csv").read_bytes() == (root / "clean_b" / "metrics.csv").read_bytes()
    report_and_assert(acceptance_report, 8, "digits 0-4, 30/10 per class, PCA-16, 200 epochs", {
        "200 epochs": (len(rows) == 200, f"{len(rows)}"),
        "final test acc >= 0.50": (s["final_acc"] >= 0.5, f"{s['final_acc']:.2f}"),
        "best test acc >= 0.60": (s["best_acc"] >= 0.6, f"{s['best_acc']:.2f}"),
        "train loss ratio <= 0.5": (ratio <= 0.5, f"{ratio:.2e}"),
        "deterministic": (same and experiment_runs["second"] == s, str(same)),
        "runtime": (True, f"{experiment_runs['clean_seconds']:.0f}s"),
    })


def test_09_noise_experiment(acceptance_report, experiment_runs):
    cmp = experiment_runs["compare"]
    root = experiment_runs["root"] / "compare"
    table = json.loads((root / "comparison.json").read_text())
    metrics = [r["metric"] for r in table["rows"]]
    noisy = cmp["noisy"]["final_acc"]
    delta = table["rows"][0]["delta"]
    report_and_assert(acceptance_report, 9, "paired clean / sigma = 0.4 runs", {
        "both runs complete": ((root / "clean" / "summary.json").exists() and (root / "noisy" / "summary.json").exists(),
                               "ok"),
        "noisy final acc >= 0.30": (noisy >= 0.3, f"{noisy:.2f}"),
        "row schema": (metrics == ["Final Acc", "Loss", "Conv Epoch"], ", ".join(metrics)),
        "accuracy delta": (abs(delta - (noisy - cmp["clean"]["final_acc"])) < 1e-15, f"{delta:+.2f}"),
    })


def test_10_convergence_metric(acceptance_report):
    # hand oracle: the 95% threshold and the first epoch reaching it, worked out per series
    cases = [
        ([0.2, 0.5, 0.8, 0.9, 0.88], 4),          # threshold 0.855
        ([0.7, 0.7, 0.7], 1),                     # threshold 0.665
        ([0.1, 0.4, 0.6, 0.75, 0.8], 5),          # threshold 0.76
        ([0.5, 0.96, 0.3, 1.0, 0.99], 2),         # threshold 0.95
        ([0.0, 0.2, 0.19, 0.2], 2),               # threshold 0.19
    ]
    got = [tr.convergence_epoch(series) for series, _ in cases]
    want = [w for _, w in cases]
    report_and_assert(acceptance_report, 10, "convergence epoch at 95% of peak", {
        "5 series exact": (got == want, f"{got}"),
    })


def test_11_determinism_and_formats(acceptance_report, experiment_runs, tmp_path):
    root = experiment_runs["root"]
    csv_same = (root / "clean_a" / "metrics.csv").read_bytes() == (root / "compare" / "clean" / "metrics.csv").read_bytes()
    model = nn.EncoderClassifier(nn.ModelConfig(layers=2), rng=SeededRng(11))
    checkpoint.save_model(tmp_path / "m.pgkt", model)
    back = checkpoint.load_params(tmp_path / "m.pgkt")
    trained = checkpoint.load_params(root / "clean_a" / "model.pgkt")
    ckpt_ok = set(back) == set(model.params) and all(back[k].tobytes() == v.tobytes() for k, v in model.params.items())
    checkpoint.write_checkpoint(tmp_path / "t.pgkt", checkpoint.model_tensors(
        nn.EncoderClassifier(nn.ModelConfig(), params=trained)))
    ckpt_ok &= (tmp_path / "t.pgkt").read_bytes() == (root / "clean_a" / "model.pgkt").read_bytes()

    images = (np.arange(3 * 28 * 28) % 256).astype(np.uint8).reshape(3, 28, 28)
    data.write_idx(tmp_path / "img", images)
    data.write_idx(tmp_path / "lab", np.array([7, 0, 3], np.uint8))
    idx = data.load_idx(tmp_path / "img", tmp_path / "lab")
    idx_ok = idx.images.shape == (3, 28, 28, 1) and idx.labels.tolist() == [7, 0, 3]
    record = bytes([9]) + bytes(range(256)) * 12
    (tmp_path / "c.bin").write_bytes(record * 2)
    cif = data.load_cifar10_bin(tmp_path / "c.bin")
    cif_ok = (cif.images.shape == (2, 32, 32, 3) and cif.labels.tolist() == [9, 9]
              and cif.images[0, 0, 1].tolist() == [1, 1, 1])
    report_and_assert(acceptance_report, 11, "determinism, checkpoint round trip, IDX and CIFAR fixtures", {
        "metrics CSV byte-identical": (csv_same, str(csv_same)),
        "checkpoint bit-exact": (ckpt_ok, str(ckpt_ok)),
        "IDX fixture": (idx_ok, str(idx.images.shape)),
        "CIFAR fixture": (cif_ok, str(cif.images.shape)),
    })
