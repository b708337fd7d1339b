"""Vector-quantization bottleneck.

Hard path: nearest codeword with a straight-through gradient copy.
Soft path: p(z|e) proportional to exp(-||e_z - e||^2) (unit temperature),
with responsibility-weighted mean codebook updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .rng import SplitMix64
from .textio import numbered_lines, read_matrix, write_matrix

DEAD_CODE_MASS = 1e-8


class Codebook:
    """K codewords of dimension ``dim``, stored as a (K, dim) tensor."""

    def __init__(self, codes, learnable: bool = True):
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        if codes.shape[0] < 1 or codes.shape[1] < 1:
            raise ValueError(f"codebook needs K >= 1 and dim >= 1, got shape {codes.shape}")
        self.codes = Tensor(codes, requires_grad=learnable)
        self.learnable = learnable

    @property
    def K(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.codes.data

    def copy(self) -> "Codebook":
        return Codebook(self.values.copy(), self.learnable)

    @classmethod
    def random(cls, K: int, dim: int, rng: SplitMix64, learnable: bool = True) -> "Codebook":
        return cls(rng.uniform_array((K, dim), -1.0, 1.0), learnable)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_matrix(fh, self.values)

    @classmethod
    def load(cls, path, learnable: bool = True) -> "Codebook":
        with open(path, encoding="utf-8") as fh:
            return cls(read_matrix(numbered_lines(fh)), learnable)


@dataclass
class AssignmentBatch:
    probs: np.ndarray
    hard_index: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("assignment rows must be probability vectors")
        if self.hard_index is not None:
            self.hard_index = np.asarray(self.hard_index, dtype=np.intp)
            onehot = np.zeros_like(self.probs)
            onehot[np.arange(len(self.hard_index)), self.hard_index] = 1.0
            if not np.array_equal(onehot, self.probs):
                raise ValueError("probs must be one-hot rows matching hard_index")

    @classmethod
    def from_indices(cls, idx, K: int) -> "AssignmentBatch":
        idx = np.asarray(idx, dtype=np.intp)
        probs = np.zeros((idx.size, K))
        probs[np.arange(idx.size), idx] = 1.0
        return cls(probs, idx)


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _codes(cb) -> np.ndarray:
    return cb.values if isinstance(cb, Codebook) else _values(cb)


def squared_distances(z: np.ndarray, codes: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - codes[None, :, :]
    return np.einsum("bkd,bkd->bk", diff, diff)


def nearest_indices(z_e, cb) -> np.ndarray:
    """Row-wise argmin distance; ties go to the lowest index."""
    z, codes = np.atleast_2d(_values(z_e)), _codes(cb)
    if z.shape[1] != codes.shape[1]:
        raise ValueError(f"encoder output has dim {z.shape[1]}, codebook has dim {codes.shape[1]}")
    return np.argmin(squared_distances(z, codes), axis=1)


def nearest_codeword(z_e, cb) -> int:
    z = _values(z_e)
    if z.ndim != 1:
        raise ValueError("nearest_codeword takes a single vector; use nearest_indices for batches")
    if not np.all(np.isfinite(z)):
        raise ValueError("encoder output must be finite")
    return int(nearest_indices(z[None, :], cb)[0])


def straight_through_quantize(z_e: Tensor, cb: Codebook) -> tuple[Tensor, np.ndarray]:
    """Forward: nearest codewords.  Backward: dL/dz_e := dL/dz_q, codebook gets zeros."""
    if z_e.data.ndim != 2 or z_e.shape[0] == 0:
        raise ValueError("straight_through_quantize needs a non-empty (B, dim) batch")
    idx = nearest_indices(z_e, cb)
    codes = cb.codes

    def back(g):
        return g, np.zeros_like(codes.data)

    z_q = Tensor.from_op(codes.data[idx], (z_e, codes), back, "straight_through")
    return z_q, idx


def commitment_loss(z_e: Tensor, z_q: Tensor) -> Tensor:
    """Batch mean of ||z_e - sg(z_q)||^2; only the encoder side gets gradient."""
    diff = ag.sub(z_e, ag.stop_gradient(z_q))
    return ag.mean(ag.sum(ag.mul(diff, diff), axis=1))


def codebook_loss(z_e: Tensor, cb: Codebook, idx) -> Tensor:
    """Batch mean of ||sg(z_e) - e_idx||^2; only the selected codewords get gradient."""
    diff = ag.sub(ag.stop_gradient(z_e), ag.gather_rows(cb.codes, idx))
    return ag.mean(ag.sum(ag.mul(diff, diff), axis=1))


def soft_probs(z_e, codes) -> tuple[Tensor, Tensor]:
    """(probs, log_probs), each (B, K), as differentiable tensors."""
    neg_d = ag.mul(ag.sq_distance(z_e, codes), -1.0)
    return ag.softmax(neg_d), ag.log_softmax(neg_d)


def soft_assignment(z_e, cb) -> AssignmentBatch:
    z = np.atleast_2d(_values(z_e))
    probs, _ = soft_probs(Tensor(z), Tensor(_codes(cb)))
    return AssignmentBatch(probs.data)


def expected_distortion(z_e, a: AssignmentBatch, codes) -> float:
    """sum_{b,z} probs[b, z] * ||z_e[b] - e_z||^2."""
    return float((a.probs * squared_distances(np.atleast_2d(_values(z_e)), _codes(codes))).sum())


def em_m_step(z_e, a: AssignmentBatch, cb: Codebook) -> Codebook:
    """Responsibility-weighted mean update; codes with mass < 1e-8 stay put."""
    z = np.atleast_2d(_values(z_e))
    if z.shape[0] < 1:
        raise ValueError("em_m_step needs a non-empty batch")
    mass = a.probs.sum(axis=0)
    live = mass >= DEAD_CODE_MASS
    new = cb.values.copy()
    new[live] = (a.probs[:, live].T @ z) / mass[live, None]
    return Codebook(new, cb.learnable)


def perplexity(a: AssignmentBatch) -> float:
    """exp of the entropy of the batch-mean assignment (effective codes in use)."""
    p_bar = a.probs.mean(axis=0)
    nz = p_bar[p_bar > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def conditional_entropy(a: AssignmentBatch) -> float:
    """Batch mean of per-row entropies; exactly 0 for one-hot rows."""
    p = a.probs
    terms = np.zeros_like(p)
    pos = p > 0
    terms[pos] = p[pos] * np.log(p[pos])
    return float(-terms.sum(axis=1).mean()) + 0.0
