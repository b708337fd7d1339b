import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqib import autograd as ag
from vqib.autograd import Tensor
from vqib.ib_oracle import UnboundedDivergenceWarning, random_simplex
from vqib.losses import (
    assemble,
    reconstruction_loss,
    vdib_regularizer,
    vib_regularizer,
    vib_regularizer_direct,
)
from vqib.vq import AssignmentBatch, conditional_entropy, soft_probs


def batch(seed, b=6, k=4):
    return AssignmentBatch(random_simplex(np.random.default_rng(seed), (b, k)))


def test_reconstruction_cases():
    x = np.array([[0.5, -1.0]])
    assert reconstruction_loss(x, x).item() == 0.0
    assert reconstruction_loss([[0.0, 0.0]], [[1.0, 1.0]]).item() == 1.0
    with pytest.raises(ValueError):
        reconstruction_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_reconstruction_vs_loops():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    total = 0.0
    for i in range(4):
        for j in range(3):
            total += (x[i, j] - y[i, j]) ** 2
    assert reconstruction_loss(x, y).item() == pytest.approx(total / 12, abs=1e-15)


def test_vdib_uniform_is_log_k():
    for seed in range(5):
        assert vdib_regularizer(batch(seed), np.full(4, 0.25)).item() == pytest.approx(math.log(4), abs=1e-14)


def test_vdib_one_hot_example():
    a = AssignmentBatch.from_indices([0, 0, 0], 2)
    v = vdib_regularizer(a, [0.9, 0.1]).item()
    assert v == pytest.approx(-math.log(0.9), abs=1e-15)
    assert v == pytest.approx(0.105361, abs=1e-6)


def test_vdib_self_cross_entropy():
    r = np.array([0.1, 0.2, 0.7])
    a = AssignmentBatch(np.tile(r, (3, 1)))
    assert vdib_regularizer(a, r).item() == pytest.approx(-(r * np.log(r)).sum(), abs=1e-15)


def test_vdib_zero_r_flagged():
    a = AssignmentBatch([[0.5, 0.5]])
    with pytest.warns(UnboundedDivergenceWarning):
        assert vdib_regularizer(a, [1.0, 0.0]) == math.inf
    with pytest.warns(UnboundedDivergenceWarning):
        assert vib_regularizer(a, [1.0, 0.0]) == math.inf
    # zero r where the assignment has no mass is fine
    assert vdib_regularizer(AssignmentBatch([[1.0, 0.0]]), [1.0, 0.0]).item() == 0.0


def test_vib_hard_equals_vdib():
    a = AssignmentBatch.from_indices([0, 2, 1, 2], 3)
    r = [0.2, 0.3, 0.5]
    assert vib_regularizer(a, r).item() == vdib_regularizer(a, r).item()


def test_vib_rows_equal_r_is_zero():
    r = np.array([0.1, 0.6, 0.3])
    assert vib_regularizer(AssignmentBatch(np.tile(r, (4, 1))), r).item() == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_vib_identity_and_nonnegativity(seed, k):
    rng = np.random.default_rng(seed)
    a = AssignmentBatch(random_simplex(rng, (5, k)))
    r = random_simplex(rng, k)
    vib = vib_regularizer(a, r).item()
    assert vib == pytest.approx(vdib_regularizer(a, r).item() - conditional_entropy(a), abs=1e-10)
    assert vib == pytest.approx(vib_regularizer_direct(a, r), abs=1e-10)
    assert vib >= -1e-12


def test_vib_uniform_r_two_formulas():
    a = batch(8)
    direct = vib_regularizer_direct(a, np.full(4, 0.25))
    assert direct == pytest.approx(math.log(4) - conditional_entropy(a), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vdib_minimized_by_batch_mean(seed):
    rng = np.random.default_rng(seed)
    a = AssignmentBatch(random_simplex(rng, (5, 3)))
    p_bar = a.probs.mean(axis=0)
    r = random_simplex(rng, 3)
    gap = vdib_regularizer(a, r).item() - vdib_regularizer(a, p_bar).item()
    kl = float((p_bar * np.log(p_bar / r)).sum())
    assert gap == pytest.approx(kl, abs=1e-12)
    assert gap >= -1e-12


def test_soft_regularizer_gradient_vs_fd():
    rng = np.random.default_rng(5)
    z = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    codes = Tensor(rng.normal(size=(3, 2)))
    r = np.array([0.2, 0.5, 0.3])

    def f():
        return vib_regularizer(soft_probs(Tensor(z.data), codes), r).item()

    ag.backward(vib_regularizer(soft_probs(z, codes), r))
    eps = 1e-5
    for idx in np.ndindex(z.shape):
        orig = z.data[idx]
        z.data[idx] = orig + eps
        up = f()
        z.data[idx] = orig - eps
        down = f()
        z.data[idx] = orig
        assert z.grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-9)


def test_assemble_none():
    out = assemble("none", {"reconstruction": 1.0, "commitment": 0.2, "codebook": 0.1}, beta=0.25)
    assert out.total == pytest.approx(1.15, abs=1e-15)
    assert out.regularizer == 0.0 and out.regularizer_kind == "none"


def test_assemble_missing_parts():
    with pytest.raises(ValueError, match="missing"):
        assemble("vdib_cross_entropy", {"reconstruction": 1.0, "commitment": 0.2, "codebook": 0.1}, 0.25)
    with pytest.raises(ValueError, match="unknown"):
        assemble("vae", {}, 0.25)


def test_assemble_total_identity():
    parts = {"reconstruction": 0.7, "commitment": 0.3, "codebook": 0.2, "regularizer": 1.1}
    out = assemble("vdib_cross_entropy", parts, beta=0.5, lambda_reg=0.1)
    assert out.total == 0.7 + 0.5 * 0.3 + 0.2 + 0.1 * 1.1
    out = assemble("vib_kl", parts, beta=0.5, lambda_reg=0.1)
    assert out.total == 0.7 + 0.1 * 1.1


def _hard_parts(seed):
    from vqib.vq import Codebook, codebook_loss, commitment_loss, straight_through_quantize

    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    cb = Codebook(rng.normal(size=(3, 2)))
    x = rng.normal(size=(5, 2))
    z_e = ag.matmul(Tensor(x), w)
    z_q, idx = straight_through_quantize(z_e, cb)
    parts = {
        "reconstruction": reconstruction_loss(x, z_q),
        "commitment": commitment_loss(z_e, z_q),
        "codebook": codebook_loss(z_e, cb, idx),
    }
    return w, cb, idx, parts


def test_vdib_uniform_shift_and_identical_gradients():
    lam = 0.7
    w1, cb1, idx, parts = _hard_parts(1)
    base = assemble("none", parts, beta=0.25, lambda_reg=lam)
    ag.backward(base.total_tensor)

    w2, cb2, idx2, parts2 = _hard_parts(1)
    parts2["regularizer"] = vdib_regularizer(AssignmentBatch.from_indices(idx2, 3), np.full(3, 1 / 3))
    reg = assemble("vdib_cross_entropy", parts2, beta=0.25, lambda_reg=lam)
    ag.backward(reg.total_tensor)

    assert reg.total - base.total == pytest.approx(lam * math.log(3), abs=1e-12)
    np.testing.assert_allclose(w1.grad, w2.grad, rtol=0, atol=1e-12)
    np.testing.assert_allclose(cb1.codes.grad, cb2.codes.grad, rtol=0, atol=1e-12)


def test_vib_total_below_vdib_total_by_cond_entropy():
    lam = 0.3
    a = batch(12)
    r = np.full(4, 0.25)
    recon = 0.9
    vdib = assemble("vdib_cross_entropy",
                    {"reconstruction": recon, "commitment": 0.0, "codebook": 0.0,
                     "regularizer": vdib_regularizer(a, r)}, beta=0.25, lambda_reg=lam)
    vib = assemble("vib_kl", {"reconstruction": recon, "regularizer": vib_regularizer(a, r)},
                   beta=0.25, lambda_reg=lam)
    assert vib.total <= vdib.total
    assert vdib.total - vib.total == pytest.approx(lam * conditional_entropy(a), abs=1e-12)
