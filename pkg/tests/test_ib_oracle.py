import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqib.ib_oracle import (
    Assignment,
    DiscreteIBProblem,
    Marginal,
    UnboundedDivergenceWarning,
    bound_sweep,
    dib_objective,
    distortion_decomposition,
    exhaustive_dib_search,
    ib_distortion,
    induced_quantities,
    kl_decomposition_check,
    random_assignment,
    random_problem,
    random_simplex,
    verify_entropy_bound,
    verify_marginal_bound,
    verify_reconstruction_bound,
)


def brute_force(joint, cond):
    """Every quantity from scalar loops over the full joint p(i, x, z)."""
    n, m = joint.shape
    k = cond.shape[1]
    p3 = {}
    for i, x, z in itertools.product(range(n), range(m), range(k)):
        p3[i, x, z] = joint[i, x] * cond[i, z]
    p_i = [sum(p3[i, x, z] for x in range(m) for z in range(k)) for i in range(n)]
    p_z = [sum(p3[i, x, z] for i in range(n) for x in range(m)) for z in range(k)]
    p_iz = {(i, z): sum(p3[i, x, z] for x in range(m)) for i in range(n) for z in range(k)}
    p_xz = {(x, z): sum(p3[i, x, z] for i in range(n)) for x in range(m) for z in range(k)}
    p_ix = {(i, x): sum(p3[i, x, z] for z in range(k)) for i in range(n) for x in range(m)}

    h_z = -sum(v * math.log(v) for v in p_z if v > 0)
    mi = sum(v * math.log(v / (p_i[i] * p_z[z])) for (i, z), v in p_iz.items() if v > 0)
    h_z_i = -sum(v * math.log(v / p_i[i]) for (i, z), v in p_iz.items() if v > 0)
    # d_IB = sum_{i,x,z} p(i,x,z) log(p(x|i) / p(x|z))
    d = 0.0
    for (i, x, z), v in p3.items():
        if v > 0:
            d += v * math.log((p_ix[i, x] / p_i[i]) / (p_xz[x, z] / p_z[z]))
    h_i = -sum(v * math.log(v) for v in p_i if v > 0)
    p_x = [sum(p_ix[i, x] for i in range(n)) for x in range(m)]
    i_ix = sum(v * math.log(v / (p_i[i] * p_x[x])) for (i, x), v in p_ix.items() if v > 0)
    pxz = np.array([[p_xz[x, z] / p_z[z] if p_z[z] > 0 else np.nan for x in range(m)] for z in range(k)])
    return dict(p_z=np.array(p_z), p_x_given_z=pxz, mi=mi, h_z=h_z, h_z_i=h_z_i, d=d, h_i=h_i, i_ix=i_ix)


def inst(seed, n=5, m=4, k=3, sparsity=0.0):
    rng = np.random.default_rng(seed)
    return random_problem(rng, n, m, sparsity), random_assignment(rng, n, k, sparsity), rng


# validation -------------------------------------------------------------------

def test_problem_validation():
    with pytest.raises(ValueError):
        DiscreteIBProblem([[0.5, 0.6]])
    with pytest.raises(ValueError):
        DiscreteIBProblem([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError):
        DiscreteIBProblem([[1.5, -0.5]])
    with pytest.raises(ValueError):
        Assignment([[0.5, 0.4]])
    with pytest.raises(ValueError):
        Marginal([0.2, 0.2])


def test_problem_file_roundtrip(tmp_path):
    prob, _, _ = inst(3)
    path = tmp_path / "p.txt"
    prob.save(path)
    first = path.read_text().splitlines()[0]
    assert first == "5 4"
    back = DiscreteIBProblem.load(path)
    np.testing.assert_array_equal(back.joint, prob.joint)


def test_problem_file_bad_count(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("2 2\n0.25 0.25\n0.5\n")
    with pytest.raises(ValueError, match="expected 4"):
        DiscreteIBProblem.load(path)


# induced quantities -----------------------------------------------------------

def test_identity_assignment_uniform():
    prob = DiscreteIBProblem(np.full((4, 3), 1 / 12))
    q = induced_quantities(prob, np.eye(4))
    assert q.mutual_information == pytest.approx(math.log(4), abs=1e-12)
    assert q.entropy_z == pytest.approx(1.386294, abs=1e-6)
    assert q.cond_entropy == 0.0


def test_equal_rows_independent():
    prob, _, rng = inst(1)
    row = random_simplex(rng, 3)
    q = induced_quantities(prob, np.tile(row, (5, 1)))
    assert abs(q.mutual_information) < 1e-15


@pytest.mark.parametrize("seed", range(20))
def test_induced_vs_brute_force(seed):
    prob, a, _ = inst(seed, sparsity=0.3 if seed % 2 else 0.0)
    q = induced_quantities(prob, a)
    bf = brute_force(prob.joint, a.cond)
    np.testing.assert_allclose(q.p_z, bf["p_z"], atol=1e-14)
    np.testing.assert_allclose(q.p_x_given_z[q.defined], bf["p_x_given_z"][q.defined], atol=1e-13)
    assert q.mutual_information == pytest.approx(bf["mi"], abs=1e-12)
    assert q.entropy_z == pytest.approx(bf["h_z"], abs=1e-12)
    assert q.cond_entropy == pytest.approx(bf["h_z_i"], abs=1e-12)


def test_unused_code_is_flagged_undefined():
    prob = DiscreteIBProblem(np.full((2, 2), 0.25))
    q = induced_quantities(prob, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert q.defined.tolist() == [True, True, False]
    assert np.all(np.isnan(q.p_x_given_z[2]))
    assert ib_distortion(prob, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]) == pytest.approx(0.0, abs=1e-15)


# distortion -------------------------------------------------------------------

def test_distortion_identity_zero():
    prob, _, _ = inst(4, n=4)
    assert ib_distortion(prob, np.eye(4)) == pytest.approx(0.0, abs=1e-14)


def test_distortion_single_cluster_is_i_ix():
    prob, _, _ = inst(5)
    bf = brute_force(prob.joint, np.ones((5, 1)))
    assert ib_distortion(prob, np.ones((5, 1))) == pytest.approx(bf["i_ix"], abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_distortion_decomposition(seed):
    prob, a, _ = inst(seed, n=4, m=3, k=2)
    first, const = distortion_decomposition(prob, a)
    direct = ib_distortion(prob, a)
    assert direct == pytest.approx(first - const, abs=1e-10)
    assert direct == pytest.approx(brute_force(prob.joint, a.cond)["d"], abs=1e-12)
    assert direct >= -1e-12


# bounds -----------------------------------------------------------------------

def test_reconstruction_bound_equality_at_true_conditional():
    prob, a, _ = inst(6)
    q = induced_quantities(prob, a).p_x_given_z
    assert abs(verify_reconstruction_bound(prob, a, q)) <= 1e-10


def test_reconstruction_bound_uniform_decoder_positive():
    prob, a, _ = inst(7)
    induced = induced_quantities(prob, a)
    gap = verify_reconstruction_bound(prob, a, np.full((3, 4), 0.25))
    # independent: sum_z p(z) KL(p(x|z) || uniform)
    expected = sum(
        induced.p_z[z] * sum(p * math.log(p / 0.25) for p in induced.p_x_given_z[z] if p > 0) for z in range(3)
    )
    assert gap > 0
    assert gap == pytest.approx(expected, abs=1e-12)


def test_reconstruction_bound_zero_decoder_is_flagged():
    prob = DiscreteIBProblem(np.full((2, 2), 0.25))
    with pytest.warns(UnboundedDivergenceWarning):
        gap = verify_reconstruction_bound(prob, np.eye(2), [[1.0, 0.0], [0.5, 0.5]])
    assert gap == math.inf


def test_marginal_bound_cases():
    prob, a, _ = inst(8)
    induced = induced_quantities(prob, a)
    assert abs(verify_marginal_bound(prob, a, induced.p_z)) <= 1e-10
    gap = verify_marginal_bound(prob, a, Marginal.uniform(3))
    kl = sum(p * math.log(p * 3) for p in induced.p_z)
    assert gap > 0
    assert gap == pytest.approx(kl, abs=1e-12)


def test_marginal_bound_zero_r_flagged():
    prob, a, _ = inst(9)
    with pytest.warns(UnboundedDivergenceWarning):
        assert verify_marginal_bound(prob, a, [1.0, 0.0, 0.0]) == math.inf


def test_entropy_bound_cases():
    prob, a, _ = inst(10)
    assert abs(verify_entropy_bound(prob, a, induced_quantities(prob, a).p_z)) <= 1e-10
    # K=2 with p(z) = [0.9, 0.1]
    prob2 = DiscreteIBProblem(np.full((2, 2), 0.25))
    a2 = [[0.9, 0.1], [0.9, 0.1]]
    expected = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert verify_entropy_bound(prob2, a2, [0.5, 0.5]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.368064, abs=1e-6)


def test_kl_decomposition_examples():
    prob = DiscreteIBProblem(np.full((2, 3), 1 / 6))
    kl, cross, cond = kl_decomposition_check(prob, np.eye(2), [0.5, 0.5])
    assert (kl, cross, cond) == pytest.approx((math.log(2), math.log(2), 0.0), abs=1e-15)
    prob4, _, _ = inst(11, k=4)
    kl, cross, cond = kl_decomposition_check(prob4, np.full((5, 4), 0.25), Marginal.uniform(4))
    assert kl == pytest.approx(0.0, abs=1e-15)
    assert cross == pytest.approx(math.log(4), abs=1e-15)
    assert cond == pytest.approx(math.log(4), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 6), st.integers(1, 5), st.integers(1, 4),
    st.sampled_from([0.0, 0.3]),
)
def test_bounds_and_identities_hold(seed, n, m, k, sparsity):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n, m, sparsity)
    a = random_assignment(rng, n, k, sparsity)
    q = random_simplex(rng, (k, m))
    r = random_simplex(rng, k)
    assert verify_reconstruction_bound(prob, a, q) >= -1e-12
    assert verify_marginal_bound(prob, a, r) >= -1e-12
    assert verify_entropy_bound(prob, a, r) >= -1e-12
    kl, cross, cond = kl_decomposition_check(prob, a, r)
    assert abs(kl - (cross - cond)) <= 1e-10
    first, const = distortion_decomposition(prob, a)
    assert abs(ib_distortion(prob, a) - (first - const)) <= 1e-10

    induced = induced_quantities(prob, a)
    h_i = -sum(p * math.log(p) for p in prob.p_i if p > 0)
    assert induced.mutual_information <= min(h_i, induced.entropy_z) + 1e-12
    assert induced.cond_entropy >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
def test_deterministic_assignment_has_zero_cond_entropy(seed, n, k):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n, 3)
    a = Assignment.deterministic(rng.integers(0, k, size=n), k)
    assert induced_quantities(prob, a).cond_entropy == 0.0


# exhaustive search ------------------------------------------------------------

def _reenumerate(prob, k, beta):
    """Second enumeration: recursive, scalar objective through the direct-KL path."""
    best = [math.inf, None]

    def rec(prefix):
        if len(prefix) == prob.n_items:
            obj = dib_objective(prob, Assignment.deterministic(prefix, k), beta)
            if obj < best[0] - 1e-12:
                best[0], best[1] = obj, list(prefix)
            return
        for z in range(k):
            rec(prefix + [z])

    rec([])
    return best


def test_search_beta_zero_identity():
    prob, _, _ = inst(12, n=4, m=3)
    a, obj = exhaustive_dib_search(prob, 4, 0.0)
    assert np.argmax(a.cond, axis=1).tolist() == [0, 1, 2, 3]
    assert obj <= 1e-12


def test_search_huge_beta_collapses():
    prob, _, _ = inst(13, n=4, m=3)
    a, obj = exhaustive_dib_search(prob, 3, 1e6)
    assert np.argmax(a.cond, axis=1).tolist() == [0, 0, 0, 0]
    assert induced_quantities(prob, a).entropy_z == 0.0


def test_search_matches_reenumeration():
    rng = np.random.default_rng(2024)
    prob = random_problem(rng, 5, 3)
    a, obj = exhaustive_dib_search(prob, 2, 0.5)
    ref_obj, ref_map = _reenumerate(prob, 2, 0.5)
    assert obj == pytest.approx(ref_obj, abs=1e-12)
    assert np.argmax(a.cond, axis=1).tolist() == ref_map


def test_search_cap():
    prob = DiscreteIBProblem(np.full((11, 2), 1 / 22))
    with pytest.raises(ValueError, match="smaller instance"):
        exhaustive_dib_search(prob, 4, 1.0)


def test_search_beats_random_maps():
    rng = np.random.default_rng(99)
    prob = random_problem(rng, 6, 4)
    _, obj = exhaustive_dib_search(prob, 3, 0.3)
    for _ in range(100):
        a = Assignment.deterministic(rng.integers(0, 3, size=6), 3)
        assert obj <= dib_objective(prob, a, 0.3) + 1e-12


def test_bound_sweep_rows():
    rows = bound_sweep(5, 3)
    assert len(rows) == 5 * 8
    assert all(r.ok for r in rows)
    assert rows[0].instance_seed == 3_000_000
