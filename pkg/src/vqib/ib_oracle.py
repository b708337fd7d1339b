"""Exact information-bottleneck quantities on finite distributions.

Setting: data index I (N values), feature symbol X (M values), codeword
index Z (K values), with X <-> I <-> Z.  The problem is the joint p(i, x);
an encoder is the N x K conditional p(z|i).  Everything is in nats, with
0 log 0 = 0.  A KL or cross-entropy term with q = 0 under p > 0 evaluates
to +inf and emits :class:`UnboundedDivergenceWarning`.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

PROB_ATOL = 1e-12
MAX_ENUMERATION = 10**6


class UnboundedDivergenceWarning(RuntimeWarning):
    pass


def _check_prob_vector(v: np.ndarray, what: str, axis: int = -1) -> None:
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{what} must be finite and nonnegative")
    if np.any(np.abs(v.sum(axis=axis) - 1.0) > PROB_ATOL):
        raise ValueError(f"{what} must sum to 1 (within {PROB_ATOL})")


@dataclass(frozen=True)
class DiscreteIBProblem:
    joint: np.ndarray

    def __post_init__(self):
        j = np.atleast_2d(np.asarray(self.joint, dtype=np.float64))
        object.__setattr__(self, "joint", j)
        if np.any(j < 0) or not np.all(np.isfinite(j)):
            raise ValueError("joint p(i, x) must be finite and nonnegative")
        if abs(j.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"joint p(i, x) must sum to 1, sums to {j.sum()!r}")
        if np.any(j.sum(axis=1) <= 0):
            raise ValueError("every item i needs p(i) > 0")

    @property
    def n_items(self) -> int:
        return self.joint.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.joint.shape[1]

    @property
    def p_i(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def p_x_given_i(self) -> np.ndarray:
        return self.joint / self.p_i[:, None]

    @classmethod
    def load(cls, path) -> "DiscreteIBProblem":
        """Read the ``N M`` header + N rows format."""
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().split()
        if len(tokens) < 2:
            raise ValueError(f"{path}: missing 'N M' header")
        n, m = int(tokens[0]), int(tokens[1])
        values = tokens[2:]
        if len(values) != n * m:
            raise ValueError(f"{path}: expected {n * m} probabilities, found {len(values)}")
        return cls(np.array([float(v) for v in values]).reshape(n, m))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{self.n_items} {self.n_symbols}\n")
            for row in self.joint:
                fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


@dataclass(frozen=True)
class Assignment:
    """Encoder p(z|i), one probability row per item."""

    cond: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.cond, dtype=np.float64))
        object.__setattr__(self, "cond", c)
        _check_prob_vector(c, "assignment rows", axis=1)

    @property
    def n_codes(self) -> int:
        return self.cond.shape[1]

    @classmethod
    def deterministic(cls, mapping, n_codes: int) -> "Assignment":
        mapping = np.asarray(mapping, dtype=np.intp)
        cond = np.zeros((mapping.size, n_codes))
        cond[np.arange(mapping.size), mapping] = 1.0
        return cls(cond)


@dataclass(frozen=True)
class Marginal:
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).ravel()
        object.__setattr__(self, "r", r)
        _check_prob_vector(r, "marginal r(z)")

    @classmethod
    def uniform(cls, k: int) -> "Marginal":
        return cls(np.full(k, 1.0 / k))


def _cond(a) -> np.ndarray:
    return a.cond if isinstance(a, Assignment) else Assignment(a).cond


def _marg(r) -> np.ndarray:
    return r.r if isinstance(r, Marginal) else Marginal(r).r


def _check_dims(prob: DiscreteIBProblem, cond: np.ndarray, r: np.ndarray | None = None) -> None:
    if cond.shape[0] != prob.n_items:
        raise ValueError(f"assignment has {cond.shape[0]} rows, problem has {prob.n_items} items")
    if r is not None and r.size != cond.shape[1]:
        raise ValueError(f"marginal has {r.size} entries, assignment has {cond.shape[1]} codes")


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _plogq(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise p*log(q) with 0*log(anything) = 0 and p>0, q=0 -> -inf."""
    p, q = np.broadcast_arrays(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64))
    out = np.zeros(p.shape)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = p[pos] * np.log(q[pos])
    return out


def _sum_flagged(terms: np.ndarray, what: str) -> float:
    total = float(terms.sum())
    if math.isinf(total):
        warnings.warn(f"{what} is unbounded: variational distribution vanishes where the true one does not",
                      UnboundedDivergenceWarning, stacklevel=3)
        return math.inf
    return total


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    return _sum_flagged(_plogq(p, p) - _plogq(p, q), "KL divergence")


@dataclass(frozen=True)
class InducedQuantities:
    p_z: np.ndarray
    p_x_given_z: np.ndarray  # rows for p(z) = 0 are NaN; see ``defined``
    defined: np.ndarray
    mutual_information: float  # I(I;Z)
    entropy_z: float  # H(Z)
    cond_entropy: float  # H(Z|I)


def induced_quantities(prob: DiscreteIBProblem, a) -> InducedQuantities:
    cond = _cond(a)
    _check_dims(prob, cond)
    p_i = prob.p_i
    p_z = p_i @ cond
    p_xz = cond.T @ prob.joint  # K x M, p(x, z) = sum_i p(z|i) p(i, x)
    defined = p_z > 0
    p_x_given_z = np.full(p_xz.shape, np.nan)
    p_x_given_z[defined] = p_xz[defined] / p_z[defined, None]

    h_z = entropy(p_z)
    h_z_given_i = float(-(p_i[:, None] * _plogq(cond, cond)).sum())
    # I(I;Z) summed directly rather than as H(Z) - H(Z|I)
    ratio = np.zeros_like(cond)
    pos = cond > 0
    ratio[pos] = np.log(cond[pos] / np.broadcast_to(p_z, cond.shape)[pos])
    mi = float((p_i[:, None] * cond * ratio).sum())
    return InducedQuantities(p_z, p_x_given_z, defined, mi, h_z, h_z_given_i)


def ib_distortion(prob: DiscreteIBProblem, a) -> float:
    """sum_i sum_z p(i) p(z|i) KL(p(x|i) || p(x|z))."""
    cond = _cond(a)
    q = induced_quantities(prob, cond)
    p_i, p_x_i = prob.p_i, prob.p_x_given_i
    total = 0.0
    for i in range(prob.n_items):
        for z in range(cond.shape[1]):
            w = p_i[i] * cond[i, z]
            if w == 0:
                continue
            kl = _plogq(p_x_i[i], p_x_i[i]) - _plogq(p_x_i[i], q.p_x_given_z[z])
            total += w * kl.sum()
    return _sum_flagged(np.array(total), "IB distortion")


def distortion_decomposition(prob: DiscreteIBProblem, a) -> tuple[float, float]:
    """Two-term form of the IB distortion: (H(X|Z) term, H(X|I) constant).

    The distortion equals ``first - constant``.  Written as the sums over the
    joints p(x, z) and p(i, x), without going through conditionals.
    """
    cond = _cond(a)
    _check_dims(prob, cond)
    p_i = prob.p_i
    p_z = p_i @ cond
    p_xz = cond.T @ prob.joint
    first = float((_plogq(p_xz, p_z[:, None]) - _plogq(p_xz, p_xz)).sum())
    constant = float((_plogq(prob.joint, p_i[:, None]) - _plogq(prob.joint, prob.joint)).sum())
    return first, constant


def verify_reconstruction_bound(prob: DiscreteIBProblem, a, q) -> float:
    """Variational cross-entropy with decoder q(x|z) minus the exact H(X|Z).

    The variational side is evaluated from the data joint,
    -sum_{i,x} p(i,x) sum_z p(z|i) log q(x|z); the exact side from the
    induced p(x|z).  Nonnegative, zero when q is the induced conditional.
    """
    cond = _cond(a)
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    _check_dims(prob, cond)
    if q.shape != (cond.shape[1], prob.n_symbols):
        raise ValueError(f"decoder table must be {cond.shape[1]} x {prob.n_symbols}, got {q.shape}")
    _check_prob_vector(q, "decoder rows q(x|z)", axis=1)
    w = prob.joint[:, None, :] * cond[:, :, None]  # (i, z, x) weights p(i,x) p(z|i)
    variational = _sum_flagged(-_plogq(w, q[None, :, :]), "variational reconstruction term")
    induced = induced_quantities(prob, cond)
    pz = induced.p_z[induced.defined]
    pxz = induced.p_x_given_z[induced.defined]
    exact = float(-(pz[:, None] * _plogq(pxz, pxz)).sum())
    return variational - exact


def variational_kl(prob: DiscreteIBProblem, a, r) -> float:
    """KL(p(Z|I) || r) = sum_i p(i) sum_z p(z|i) log(p(z|i) / r(z))."""
    cond, r = _cond(a), _marg(r)
    _check_dims(prob, cond, r)
    terms = prob.p_i[:, None] * (_plogq(cond, cond) - _plogq(cond, r[None, :]))
    return _sum_flagged(terms, "KL(p(Z|I) || r)")


def variational_cross_entropy(prob: DiscreteIBProblem, a, r) -> float:
    """H(p(Z|I), r) = -sum_i p(i) sum_z p(z|i) log r(z)."""
    cond, r = _cond(a), _marg(r)
    _check_dims(prob, cond, r)
    return _sum_flagged(-prob.p_i[:, None] * _plogq(cond, r[None, :]), "H(p(Z|I), r)")


def verify_marginal_bound(prob: DiscreteIBProblem, a, r) -> float:
    return variational_kl(prob, a, r) - induced_quantities(prob, a).mutual_information


def verify_entropy_bound(prob: DiscreteIBProblem, a, r) -> float:
    return variational_cross_entropy(prob, a, r) - induced_quantities(prob, a).entropy_z


def kl_decomposition_check(prob: DiscreteIBProblem, a, r) -> tuple[float, float, float]:
    """(KL(p(Z|I)||r), H(p(Z|I), r), H(Z|I)); the first is the difference of the others."""
    return (
        variational_kl(prob, a, r),
        variational_cross_entropy(prob, a, r),
        induced_quantities(prob, a).cond_entropy,
    )


def dib_objective(prob: DiscreteIBProblem, a, beta: float) -> float:
    q = induced_quantities(prob, a)
    return ib_distortion(prob, a) + beta * q.entropy_z


def _dib_objectives_batch(prob: DiscreteIBProblem, maps: np.ndarray, k: int, beta: float) -> np.ndarray:
    """DIB objective for a block of deterministic maps (A, N), via H(X|Z) - H(X|I) + beta H(Z)."""
    onehot = np.zeros((maps.shape[0], maps.shape[1], k))
    np.put_along_axis(onehot, maps[:, :, None], 1.0, axis=2)
    p_z = onehot.transpose(0, 2, 1) @ prob.p_i  # (A, K)
    p_xz = onehot.transpose(0, 2, 1) @ prob.joint  # (A, K, M)
    h_xz = -_plogq(p_xz, p_xz).sum(axis=(1, 2))
    h_z = -_plogq(p_z, p_z).sum(axis=1)
    h_x_given_i = -(_plogq(prob.joint, prob.joint).sum() - _plogq(prob.p_i, prob.p_i).sum())
    distortion = (h_xz - h_z) - h_x_given_i
    return np.maximum(distortion, 0.0) + beta * h_z


def exhaustive_dib_search(prob: DiscreteIBProblem, k: int, beta: float, tie_tol: float = 1e-12):
    """Minimize d_IB + beta*H(Z) over all K**N deterministic encoders.

    Enumeration is lexicographic; a later map replaces the incumbent only if
    it improves by more than ``tie_tol``, so near-ties resolve to the
    lexicographically smallest map.  Returns ``(Assignment, objective)``.
    """
    n = prob.n_items
    if k < 1:
        raise ValueError("need at least one codeword")
    if k**n > MAX_ENUMERATION:
        raise ValueError(
            f"K**N = {k}**{n} exceeds the enumeration cap {MAX_ENUMERATION}; use a smaller instance"
        )
    best_obj, best_map = math.inf, None
    chunk = 8192
    it = itertools.product(range(k), repeat=n)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.intp).reshape(-1, n)
        if block.size == 0:
            break
        objs = _dib_objectives_batch(prob, block, k, beta)
        j = int(np.argmin(objs))
        # first index within tie_tol of the block minimum keeps lexicographic order
        j = int(np.flatnonzero(objs <= objs[j] + tie_tol)[0])
        if objs[j] < best_obj - tie_tol:
            best_obj, best_map = float(objs[j]), block[j].copy()
    assignment = Assignment.deterministic(best_map, k)
    return assignment, dib_objective(prob, assignment, beta)


# random instances -----------------------------------------------------------


def random_simplex(rng: np.random.Generator, shape, sparsity: float = 0.0) -> np.ndarray:
    """Rows uniform on the simplex (normalized exponentials), optional zeros."""
    x = rng.exponential(size=shape)
    if sparsity > 0:
        x = np.where(rng.random(size=shape) < sparsity, 0.0, x)
        flat = x.reshape(-1, x.shape[-1])
        dead = flat.sum(axis=1) == 0
        flat[dead, rng.integers(0, x.shape[-1], size=dead.sum())] = 1.0
    return x / x.sum(axis=-1, keepdims=True)


def random_problem(rng: np.random.Generator, n: int, m: int, sparsity: float = 0.0) -> DiscreteIBProblem:
    p_i = random_simplex(rng, n)
    p_x_i = random_simplex(rng, (n, m), sparsity)
    joint = p_i[:, None] * p_x_i
    return DiscreteIBProblem(joint / joint.sum())


def random_assignment(rng: np.random.Generator, n: int, k: int, sparsity: float = 0.0) -> Assignment:
    return Assignment(random_simplex(rng, (n, k), sparsity))


# randomized sweep -----------------------------------------------------------

GAP_TOL = 1e-12
IDENTITY_TOL = 1e-10

BOUND_NAMES = ("reconstruction", "marginal", "entropy")
EQUALITY_NAMES = ("reconstruction_equality", "marginal_equality", "entropy_equality")
IDENTITY_NAMES = ("kl_decomposition", "distortion_decomposition")


@dataclass(frozen=True)
class SweepRow:
    instance_seed: int
    bound_name: str
    gap: float

    @property
    def ok(self) -> bool:
        if self.bound_name in BOUND_NAMES:
            return self.gap >= -GAP_TOL
        return abs(self.gap) <= IDENTITY_TOL


def sweep_instance(instance_seed: int, max_n: int = 6, max_m: int = 5, max_k: int = 4) -> list[SweepRow]:
    """All bound gaps and identity residuals for one seeded random instance."""
    rng = np.random.default_rng(instance_seed)
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(2, max_m + 1))
    k = int(rng.integers(1, max_k + 1))
    sparsity = float(rng.choice([0.0, 0.3]))
    prob = random_problem(rng, n, m, sparsity)
    a = random_assignment(rng, n, k, sparsity)
    q = random_simplex(rng, (k, m))
    r = random_simplex(rng, k)

    induced = induced_quantities(prob, a)
    # q for undefined codes is irrelevant (zero weight); fill with uniform
    q_true = np.where(induced.defined[:, None], np.nan_to_num(induced.p_x_given_z), 1.0 / m)

    kl, cross, cond = kl_decomposition_check(prob, a, r)
    first, const = distortion_decomposition(prob, a)
    rows = [
        ("reconstruction", verify_reconstruction_bound(prob, a, q)),
        ("marginal", verify_marginal_bound(prob, a, r)),
        ("entropy", verify_entropy_bound(prob, a, r)),
        ("reconstruction_equality", verify_reconstruction_bound(prob, a, q_true)),
        ("marginal_equality", verify_marginal_bound(prob, a, induced.p_z)),
        ("entropy_equality", verify_entropy_bound(prob, a, induced.p_z)),
        ("kl_decomposition", kl - (cross - cond)),
        ("distortion_decomposition", ib_distortion(prob, a) - (first - const)),
    ]
    return [SweepRow(instance_seed, name, float(g)) for name, g in rows]


def bound_sweep(n_instances: int, seed: int) -> list[SweepRow]:
    """Instance seeds are ``seed * 1_000_000 + j``; output sorted by seed."""
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    out: list[SweepRow] = []
    for j in range(n_instances):
        out.extend(sweep_instance(seed * 1_000_000 + j))
    return out
