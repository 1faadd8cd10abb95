"""RBF-SVM and the two-variable dual solver.

The oracle maximizes the 4-point dual directly: the equality constraint
leaves three free multipliers, which are swept on a refined grid, entirely
independent of the solver under test.
"""

import numpy as np
import pytest

from cryb.errors import BadConfig, CorruptCheckpoint, ShapeMismatch, SingleClass
from cryb.svm import (DEFAULT_C_GRID, SvmModel, class_weights_from_counts,
                      dual_objective, features_from_mfccs, load_svm, rbf_gram,
                      rbf_kernel, save_svm, smo_train, standardize_apply,
                      standardize_fit, svm_grid_search)

XOR_X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_Y = np.array([1.0, 1.0, -1.0, -1.0])


def brute_force_dual(x, y, c, gamma, steps=60, refinements=3):
    """Grid-maximize the dual over the equality-constrained box."""
    gram = rbf_gram(x, x, gamma)

    def objective(alpha):
        return dual_objective(alpha, y, gram)

    lo = np.zeros(3)
    hi = np.full(3, c)
    best, best_alpha = -np.inf, None
    for _ in range(refinements):
        axes = [np.linspace(lo[i], hi[i], steps) for i in range(3)]
        g0, g1, g2 = np.meshgrid(*axes, indexing="ij")
        # equality constraint pins the fourth multiplier
        a3 = (g0 * y[0] + g1 * y[1] + g2 * y[2]) / -y[3]
        mask = (a3 >= 0) & (a3 <= c)
        cand = np.stack([g0, g1, g2, a3], axis=-1)[mask]
        ay = cand * y
        vals = cand.sum(axis=1) - 0.5 * np.einsum(
            "ni,ij,nj->n", ay, gram, ay)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_alpha = float(vals[i]), cand[i]
        span = (hi - lo) / steps * 2
        lo = np.maximum(best_alpha[:3] - span, 0)
        hi = np.minimum(best_alpha[:3] + span, c)
    assert abs(objective(best_alpha)) >= 0  # sanity: evaluable
    return best, best_alpha


def kkt_violation(model, x, y, c_box, tol):
    """Largest violation of the dual optimality conditions."""
    f = model.decision(x) if model.means is None else None
    if f is None:
        # bypass standardization: decision on raw support duplicates
        f = model.dual_coef @ rbf_gram(model.support, x, model.gamma) + model.bias
    # recover full alpha vector: dual_coef = alpha * y on support rows
    alpha = np.zeros(len(x))
    for i, row in enumerate(x):
        match = np.where((np.abs(model.support - row) < 1e-12).all(axis=1))[0]
        if match.size:
            alpha[i] = abs(model.dual_coef[match[0]])
    worst = 0.0
    for i in range(len(x)):
        margin = y[i] * f[i]
        if alpha[i] < tol:
            worst = max(worst, 1.0 - margin)            # must be >= 1
        elif alpha[i] > c_box[i] - tol:
            worst = max(worst, margin - 1.0)            # must be <= 1
        else:
            worst = max(worst, abs(margin - 1.0))       # must be == 1
    return worst


def test_rbf_kernel_hand_values():
    u = np.array([1.0, 0.0])
    v = np.array([0.0, 1.0])
    assert rbf_kernel(u, u, 0.5) == pytest.approx(1.0)
    assert rbf_kernel(u, v, 0.5) == pytest.approx(np.exp(-1.0))
    assert rbf_kernel(u, v, 2.0) == pytest.approx(np.exp(-4.0))
    with pytest.raises(ShapeMismatch):
        rbf_kernel(u, np.zeros(3), 0.5)
    with pytest.raises(BadConfig):
        rbf_kernel(u, v, -1.0)


def test_rbf_gram_psd(rng):
    for _ in range(5):
        x = rng.normal(size=(int(rng.integers(5, 40)), int(rng.integers(2, 10))))
        gamma = float(rng.uniform(0.01, 5.0))
        gram = rbf_gram(x, x, gamma)
        np.testing.assert_allclose(gram, gram.T, atol=1e-12)
        assert np.linalg.eigvalsh(gram).min() >= -1e-6
        np.testing.assert_allclose(np.diag(gram), 1.0, atol=1e-12)


def test_standardize(rng):
    x = rng.normal(3.0, 2.5, size=(50, 8))
    x[:, 3] = 7.0  # constant column exercises the variance floor
    means, stds = standardize_fit(x)
    z = standardize_apply(x, means, stds)
    np.testing.assert_allclose(z[:, :3].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z[:, :3].std(axis=0), 1, atol=1e-9)
    assert np.all(z[:, 3] == 0)
    with pytest.raises(BadConfig):
        standardize_fit(x[:1])


def test_smo_matches_brute_force_on_xor():
    c, gamma = 10.0, 1.0
    model = smo_train(XOR_X, XOR_Y, c=c, gamma=gamma, standardized=True)
    assert model.converged
    gram = rbf_gram(XOR_X, XOR_X, gamma)
    alpha = np.zeros(4)
    for i in range(4):
        m = np.where((np.abs(model.support - XOR_X[i]) < 1e-12).all(axis=1))[0]
        if m.size:
            alpha[i] = abs(model.dual_coef[m[0]])
    got = dual_objective(alpha, XOR_Y, gram)
    want, _ = brute_force_dual(XOR_X, XOR_Y, c, gamma)
    assert got >= want - 1e-3
    assert kkt_violation(model, XOR_X, XOR_Y, np.full(4, c), 1e-3) <= 1e-3
    # XOR predictions must be perfect
    scores = model.dual_coef @ rbf_gram(model.support, XOR_X, gamma) + model.bias
    assert np.all(np.sign(scores) == XOR_Y)


def test_smo_on_random_separable_problems(rng):
    for trial in range(3):
        n = 30
        x = np.vstack([rng.normal(-2.0, 0.6, size=(n, 3)),
                       rng.normal(+2.0, 0.6, size=(n, 3))])
        y = np.concatenate([-np.ones(n), np.ones(n)])
        model = smo_train(x, y, c=10.0, gamma=0.2, standardized=True)
        assert model.converged
        scores = (model.dual_coef @ rbf_gram(model.support, x, 0.2)
                  + model.bias)
        assert np.mean(np.sign(scores) == y) == 1.0
        box = np.full(len(x), 10.0)
        assert kkt_violation(model, x, y, box, 1e-3) <= 1.5e-3


def test_smo_class_weights_scale_box(rng):
    x = np.vstack([rng.normal(-1.0, 1.0, size=(40, 2)),
                   rng.normal(1.0, 1.0, size=(10, 2))])
    y = np.concatenate([-np.ones(40), np.ones(10)])
    w = class_weights_from_counts(10, 40)
    assert w == (50 / 20, 50 / 80)
    model = smo_train(x, y, c=1.0, gamma=0.5, class_weights=w,
                      standardized=True)
    alpha = np.abs(model.dual_coef)
    labels = np.sign(model.dual_coef)
    assert np.all(alpha[labels > 0] <= 1.0 * w[0] + 1e-9)
    assert np.all(alpha[labels < 0] <= 1.0 * w[1] + 1e-9)


def test_smo_rejects_degenerate_inputs(rng):
    x = rng.normal(size=(5, 2))
    with pytest.raises(SingleClass):
        smo_train(x, np.ones(5), c=1.0, gamma=0.5)
    with pytest.raises(ShapeMismatch):
        smo_train(x, np.ones(4), c=1.0, gamma=0.5)
    with pytest.raises(BadConfig):
        smo_train(x, np.array([1, 1, 1, -1, -1.0]), c=-1.0, gamma=0.5)


def test_non_convergence_is_flagged_not_fatal(rng):
    x = rng.normal(size=(30, 2))
    y = np.sign(rng.normal(size=30))
    y[y == 0] = 1.0
    model = smo_train(x, y, c=100.0, gamma=10.0, max_iter=3,
                      standardized=True)
    assert model.converged is False


def test_dual_objective_formula(rng):
    x = rng.normal(size=(6, 2))
    y = np.array([1, -1, 1, -1, 1, -1.0])
    alpha = rng.uniform(0, 1, 6)
    gram = rbf_gram(x, x, 0.7)
    manual = alpha.sum() - 0.5 * sum(
        alpha[i] * alpha[j] * y[i] * y[j] * gram[i, j]
        for i in range(6) for j in range(6))
    assert dual_objective(alpha, y, gram) == pytest.approx(manual)


def test_grid_search_prefers_smaller_c_then_gamma(rng):
    # trivially separable: every config reaches identical validation UAR
    x_train = np.vstack([rng.normal(-8, 0.1, size=(20, 4)),
                         rng.normal(8, 0.1, size=(20, 4))])
    y_train = np.concatenate([-np.ones(20), np.ones(20)])
    x_val = np.vstack([rng.normal(-8, 0.1, size=(6, 4)),
                       rng.normal(8, 0.1, size=(6, 4))])
    y_val = np.concatenate([-np.ones(6), np.ones(6)])
    model, c, gamma, results = svm_grid_search(x_train, y_train, x_val, y_val)
    assert c == min(DEFAULT_C_GRID)
    gammas = sorted({r["gamma"] for r in results})
    assert gamma == gammas[0]
    assert len(results) == 12
    top = max(r["val_uar"] for r in results)
    assert all(r["val_uar"] <= top for r in results)


def test_features_from_mfccs_flatten():
    mats = [np.arange(40 * 101, dtype=np.float64).reshape(40, 101)]
    x = features_from_mfccs(mats)
    assert x.shape == (1, 4040)
    assert x[0, 0] == 0 and x[0, -1] == 40 * 101 - 1


def test_svm_persistence_round_trip(tmp_path, rng):
    x = np.vstack([rng.normal(-2, 0.5, size=(15, 4)),
                   rng.normal(2, 0.5, size=(15, 4))])
    y = np.concatenate([-np.ones(15), np.ones(15)])
    means, stds = standardize_fit(x)
    model = smo_train(standardize_apply(x, means, stds), y, c=10.0, gamma=0.3,
                      standardized=True)
    model.means, model.stds = means, stds
    model.pos_label, model.neg_label = "asphyxia", "normal"
    path = tmp_path / "m.svm"
    save_svm(model, path, class_names=["asphyxia", "normal"],
             metrics={"val_uar": 1.0})
    back = load_svm(path)
    np.testing.assert_array_equal(back.support, model.support)
    np.testing.assert_array_equal(back.dual_coef, model.dual_coef)
    assert back.bias == model.bias
    assert back.gamma == model.gamma
    assert back.pos_label == "asphyxia"
    assert back.converged is True
    test_x = rng.normal(size=(8, 4))
    np.testing.assert_array_equal(back.decision(test_x), model.decision(test_x))


def test_svm_container_rejects_corruption(tmp_path, rng):
    x = rng.normal(size=(10, 3))
    y = np.array([1, 1, 1, 1, 1, -1, -1, -1, -1, -1.0])
    model = smo_train(x, y, c=1.0, gamma=0.5, standardized=True)
    path = tmp_path / "m.svm"
    save_svm(model, path, class_names=["p", "n"], metrics={})
    blob = bytearray(path.read_bytes())
    blob[3] ^= 0x55
    bad = tmp_path / "bad.svm"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        load_svm(bad)
    trunc = tmp_path / "t.svm"
    trunc.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(CorruptCheckpoint):
        load_svm(trunc)
