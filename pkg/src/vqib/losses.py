"""Batch losses: reconstruction, VDIB cross-entropy and VIB KL regularizers.

Regularizers take the assignment either as an :class:`AssignmentBatch`
(plain evaluation) or as a ``(probs, log_probs)`` tensor pair from
:func:`vqib.vq.soft_probs` (training, differentiable).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .ib_oracle import UnboundedDivergenceWarning
from .vq import AssignmentBatch, conditional_entropy

KINDS = ("none", "vdib_cross_entropy", "vib_kl")


def reconstruction_loss(x, x_hat) -> Tensor:
    """Mean squared error over all entries.

    With a unit-variance Gaussian decoder this is 2/D times the per-row
    negative log-likelihood, up to an additive constant.
    """
    x, x_hat = ag.as_tensor(x), ag.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"reconstruction_loss: shapes differ, {x.shape} vs {x_hat.shape}")
    diff = ag.sub(x, x_hat)
    return ag.mean(ag.mul(diff, diff))


def _split(a):
    if isinstance(a, AssignmentBatch):
        return Tensor(a.probs), None
    probs, log_probs = a
    return probs, log_probs


def _log_marginal(r, probs: np.ndarray) -> np.ndarray | None:
    """log r, or None if r vanishes somewhere the assignment puts mass."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size != probs.shape[1]:
        raise ValueError(f"marginal has {r.size} entries, assignment has {probs.shape[1]} codes")
    if np.any((r == 0) & np.any(probs > 0, axis=0)):
        warnings.warn("r(z) = 0 where the assignment has mass; regularizer is +inf",
                      UnboundedDivergenceWarning, stacklevel=3)
        return None
    with np.errstate(divide="ignore"):
        return np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)


def vdib_regularizer(a, r):
    """(1/B) sum_b sum_z p(z|b) * (-log r(z)).  Returns ``math.inf`` if unbounded."""
    probs, _ = _split(a)
    log_r = _log_marginal(r, probs.data)
    if log_r is None:
        return math.inf
    per_row = ag.sum(ag.mul(probs, -log_r), axis=1)
    return ag.mean(per_row)


def soft_conditional_entropy(a):
    """Differentiable batch-mean row entropy."""
    probs, log_probs = _split(a)
    if log_probs is None:
        return Tensor(conditional_entropy(AssignmentBatch(probs.data)))
    return ag.mean(ag.mul(ag.sum(ag.mul(probs, log_probs), axis=1), -1.0))


def vib_regularizer(a, r):
    """Batch-mean KL(p(z|b) || r), assembled as cross-entropy minus conditional entropy."""
    cross = vdib_regularizer(a, r)
    if cross is math.inf:
        return math.inf
    return ag.sub(cross, soft_conditional_entropy(a))


def vib_regularizer_direct(a: AssignmentBatch, r) -> float:
    """Same KL, summed row by row without the decomposition."""
    r = np.asarray(r, dtype=np.float64).ravel()
    total = 0.0
    for row in a.probs:
        pos = row > 0
        if np.any(r[pos] == 0):
            return math.inf
        total += float((row[pos] * (np.log(row[pos]) - np.log(r[pos]))).sum())
    return total / a.probs.shape[0]


@dataclass
class LossBreakdown:
    reconstruction: float
    commitment: float
    codebook: float
    regularizer: float
    total: float
    beta: float
    regularizer_kind: str
    total_tensor: Tensor | None = field(default=None, repr=False, compare=False)


def _val(x) -> float:
    if isinstance(x, Tensor):
        return x.item()
    return float(x)


def assemble(kind: str, parts: dict, beta: float, lambda_reg: float = 1.0) -> LossBreakdown:
    """Combine loss parts for a regularizer kind.

    none:                recon + beta*commitment + codebook
    vdib_cross_entropy:  recon + beta*commitment + codebook + lambda*cross_entropy
    vib_kl:              recon + lambda*kl   (codebook moves by EM, not gradients)

    ``parts`` values may be floats or scalar tensors; ``total_tensor`` is set
    when any used part is a tensor.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown regularizer kind {kind!r}; expected one of {KINDS}")
    needed = {
        "none": ("reconstruction", "commitment", "codebook"),
        "vdib_cross_entropy": ("reconstruction", "commitment", "codebook", "regularizer"),
        "vib_kl": ("reconstruction", "regularizer"),
    }[kind]
    missing = [k for k in needed if parts.get(k) is None]
    if missing:
        raise ValueError(f"loss kind {kind!r} is missing parts: {', '.join(missing)}")
    if beta < 0:
        raise ValueError("beta must be nonnegative")

    weights = {"reconstruction": 1.0, "commitment": beta, "codebook": 1.0, "regularizer": lambda_reg}
    total_tensor = None
    total = 0.0
    for name in needed:
        term = parts[name]
        if isinstance(term, Tensor):
            weighted = ag.mul(term, weights[name])
            total_tensor = weighted if total_tensor is None else ag.add(total_tensor, weighted)
        total += weights[name] * _val(term)
    if total_tensor is not None:
        consts = sum(weights[n] * _val(parts[n]) for n in needed if not isinstance(parts[n], Tensor))
        if consts:
            total_tensor = ag.add(total_tensor, consts)
        total = total_tensor.item()

    return LossBreakdown(
        reconstruction=_val(parts["reconstruction"]),
        commitment=_val(parts.get("commitment") or 0.0),
        codebook=_val(parts.get("codebook") or 0.0),
        regularizer=_val(parts["regularizer"]) if kind != "none" else 0.0,
        total=total,
        beta=beta,
        regularizer_kind=kind,
        total_tensor=total_tensor,
    )
