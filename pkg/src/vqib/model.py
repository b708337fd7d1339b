"""Encoder/decoder MLPs and the two training loops.

hard_vqvae: x -> enc -> nearest codeword (straight-through) -> dec; the
codebook moves only through the codebook loss gradient.
soft_em: x -> enc -> p(z|x) -> sum_z p(z|x) e_z -> dec; the codebook is a
constant for the gradient step and is refit by an EM M-step afterwards.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError, Tensor
from .data import Dataset
from .losses import assemble, reconstruction_loss, vdib_regularizer, vib_regularizer, LossBreakdown
from .rng import SplitMix64
from .textio import numbered_lines, read_matrix, write_matrix
from .vq import (
    AssignmentBatch,
    Codebook,
    codebook_loss,
    commitment_loss,
    conditional_entropy,
    em_m_step,
    expected_distortion,
    perplexity,
    soft_probs,
    straight_through_quantize,
)

MODES = ("hard_vqvae", "soft_em")
VALID_KINDS = {"hard_vqvae": ("none", "vdib_cross_entropy"), "soft_em": ("vib_kl",)}
DIVERGENCE_THRESHOLD = 1e6

# seed offsets so the enc/dec/codebook/batch streams never overlap
_STREAM_ENCODER, _STREAM_DECODER, _STREAM_CODEBOOK, _STREAM_BATCHES = 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: "MetricsTrace"):
        super().__init__(message)
        self.trace = trace


class MLP:
    """ReLU hidden layers, identity output.  ``widths = [in, h1, ..., out]``."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for j, (w, b) in enumerate(zip(weights, biases)):
            if np.asarray(b).shape != (np.asarray(w).shape[1],):
                raise ValueError(f"layer {j}: bias shape {np.asarray(b).shape} does not match weight {np.asarray(w).shape}")
            if j and np.asarray(weights[j - 1]).shape[1] != np.asarray(w).shape[0]:
                raise ValueError(f"layer {j}: input width does not match previous layer")
        self.weights = [Tensor(w, requires_grad=True) for w in weights]
        self.biases = [Tensor(b, requires_grad=True) for b in biases]

    @classmethod
    def init(cls, widths: list[int], rng: SplitMix64) -> "MLP":
        """Uniform in [-0.5, 0.5] / sqrt(fan_in), weights then bias per layer."""
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform_array((fan_in, fan_out), -0.5, 0.5) * scale)
            bs.append(rng.uniform_array((fan_out,), -0.5, 0.5) * scale)
        return cls(ws, bs)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x) -> Tensor:
        h = ag.as_tensor(x)
        last = len(self.weights) - 1
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.add(ag.matmul(h, w), b)
            if j < last:
                h = ag.relu(h)
        return h

    def copy(self) -> "MLP":
        return MLP([w.data.copy() for w in self.weights], [b.data.copy() for b in self.biases])


@dataclass
class TrainConfig:
    seed: int = 7
    batch_size: int = 64
    steps: int = 2000
    learning_rate: float = 0.05
    K: int = 16
    code_dim: int = 2
    hidden: int = 32
    beta: float = 0.25
    lambda_reg: float = 1.0
    mode: str = "hard_vqvae"
    regularizer_kind: str = "none"
    r_kind: str = "uniform"
    em_every: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.regularizer_kind not in VALID_KINDS[self.mode]:
            raise ConfigError(
                f"regularizer_kind {self.regularizer_kind!r} is not valid for mode {self.mode!r}; "
                f"use one of {VALID_KINDS[self.mode]}"
            )
        if self.r_kind not in ("uniform", "fitted"):
            raise ConfigError(f"r_kind must be 'uniform' or 'fitted', got {self.r_kind!r}")
        for name in ("batch_size", "K", "code_dim", "em_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden < 0:
            raise ConfigError("hidden must be >= 0 (0 means no hidden layer)")
        for name in ("steps",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("learning_rate", "beta", "lambda_reg"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0")


@dataclass
class StepRecord:
    step: int
    recon: float
    commitment: float
    codebook: float
    regularizer: float
    total: float
    perplexity: float
    cond_entropy: float


METRIC_FIELDS = tuple(f.name for f in fields(StepRecord))


@dataclass
class MetricsTrace:
    records: list[StepRecord] = field(default_factory=list)
    # (before, after) expected distortion around each EM update
    em_updates: list[tuple[float, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class HardForward:
    x_hat: Tensor
    z_e: Tensor
    z_q: Tensor
    idx: np.ndarray


@dataclass
class SoftForward:
    x_hat: Tensor
    z_e: Tensor
    assignment: AssignmentBatch
    probs: Tensor
    log_probs: Tensor
    decoder_input: Tensor


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except NonFiniteError as exc:
        raise NonFiniteError(name, f"non-finite values in {name}: {exc}") from exc


def forward_hard(x, enc: MLP, cb: Codebook, dec: MLP) -> HardForward:
    z_e = _stage("encoder", enc, x)
    z_q, idx = _stage("quantizer", straight_through_quantize, z_e, cb)
    x_hat = _stage("decoder", dec, z_q)
    return HardForward(x_hat, z_e, z_q, idx)


def forward_soft(x, enc: MLP, cb: Codebook, dec: MLP) -> SoftForward:
    z_e = _stage("encoder", enc, x)
    probs, log_probs = _stage("quantizer", soft_probs, z_e, cb.codes)
    mixed = _stage("quantizer", ag.matmul, probs, cb.codes)
    x_hat = _stage("decoder", dec, mixed)
    return SoftForward(x_hat, z_e, AssignmentBatch(probs.data), probs, log_probs, mixed)


def sgd_step(params: list[Tensor], lr: float) -> None:
    """p <- p - lr * grad, then clear grads.  Params without grad are left alone."""
    for p in params:
        if p.grad is not None:
            p.data = p.data - lr * p.grad
        p.grad = None


def _marginal(cfg: TrainConfig, probs: np.ndarray) -> np.ndarray:
    if cfg.r_kind == "uniform":
        return np.full(cfg.K, 1.0 / cfg.K)
    return probs.mean(axis=0)


def hard_losses(x, enc: MLP, cb: Codebook, dec: MLP, cfg: TrainConfig) -> tuple[LossBreakdown, AssignmentBatch]:
    fw = forward_hard(x, enc, cb, dec)
    a = AssignmentBatch.from_indices(fw.idx, cb.K)
    parts = {
        "reconstruction": reconstruction_loss(x, fw.x_hat),
        "commitment": commitment_loss(fw.z_e, fw.z_q),
        "codebook": codebook_loss(fw.z_e, cb, fw.idx),
    }
    if cfg.regularizer_kind == "vdib_cross_entropy":
        parts["regularizer"] = vdib_regularizer(a, _marginal(cfg, a.probs))
    return assemble(cfg.regularizer_kind, parts, cfg.beta, cfg.lambda_reg), a


def soft_losses(x, enc: MLP, cb: Codebook, dec: MLP, cfg: TrainConfig) -> tuple[LossBreakdown, AssignmentBatch]:
    fw = forward_soft(x, enc, cb, dec)
    r = _marginal(cfg, fw.probs.data)
    parts = {
        "reconstruction": reconstruction_loss(x, fw.x_hat),
        "regularizer": vib_regularizer((fw.probs, fw.log_probs), r),
    }
    return assemble("vib_kl", parts, cfg.beta, cfg.lambda_reg), fw.assignment


def init_model(cfg: TrainConfig, input_dim: int) -> tuple[MLP, Codebook, MLP]:
    hidden = [cfg.hidden] if cfg.hidden else []
    enc = MLP.init([input_dim, *hidden, cfg.code_dim], SplitMix64(cfg.seed * 16 + _STREAM_ENCODER))
    dec = MLP.init([cfg.code_dim, *hidden, input_dim], SplitMix64(cfg.seed * 16 + _STREAM_DECODER))
    cb = Codebook.random(cfg.K, cfg.code_dim, SplitMix64(cfg.seed * 16 + _STREAM_CODEBOOK),
                         learnable=cfg.mode == "hard_vqvae")
    return enc, cb, dec


class BatchSampler:
    """Consecutive slices of a fresh seeded permutation per epoch; short tails are dropped.

    Indices inside a batch are sorted so reductions run in a fixed row order.
    """

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = SplitMix64(seed * 16 + _STREAM_BATCHES)
        self._perm = self.rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        out = np.sort(self._perm[self._pos:self._pos + self.batch_size])
        self._pos += self.batch_size
        return out


@dataclass
class TrainResult:
    encoder: MLP
    codebook: Codebook
    decoder: MLP
    trace: MetricsTrace
    config: TrainConfig


def train(cfg: TrainConfig, dataset: Dataset, model: tuple[MLP, Codebook, MLP] | None = None) -> TrainResult:
    """Plain SGD for ``cfg.steps`` steps; one trace record per step.

    Each record holds the loss of the batch *before* that step's update.
    Raises :class:`TrainingDiverged` (carrying the trace so far) if the total
    exceeds 1e6 or anything goes non-finite.
    """
    cfg.validate()
    if dataset.n < 1:
        raise ConfigError("dataset is empty")
    enc, cb, dec = model if model is not None else init_model(cfg, dataset.dim)
    sampler = BatchSampler(dataset.n, cfg.batch_size, cfg.seed)
    trace = MetricsTrace()
    hard = cfg.mode == "hard_vqvae"
    params = enc.parameters() + dec.parameters() + ([cb.codes] if hard else [])

    for step in range(cfg.steps):
        x = Tensor(dataset.rows[sampler.next()])
        try:
            if hard:
                loss, a = hard_losses(x, enc, cb, dec, cfg)
            else:
                loss, a = soft_losses(x, enc, cb, dec, cfg)
            if not math.isfinite(loss.total) or loss.total > DIVERGENCE_THRESHOLD:
                raise TrainingDiverged(f"step {step}: total loss {loss.total!r} exceeds {DIVERGENCE_THRESHOLD:g}", trace)
            ag.backward(loss.total_tensor)
            sgd_step(params, cfg.learning_rate)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {step}: {exc}", trace) from exc

        trace.records.append(StepRecord(
            step=step,
            recon=loss.reconstruction,
            commitment=loss.commitment,
            codebook=loss.codebook,
            regularizer=loss.regularizer,
            total=loss.total,
            perplexity=perplexity(a),
            cond_entropy=conditional_entropy(a),
        ))

        if not hard and (step + 1) % cfg.em_every == 0:
            z_e = enc(x.data)
            resp = AssignmentBatch(soft_probs(z_e.data, cb.values)[0].data)
            before = expected_distortion(z_e, resp, cb)
            cb = em_m_step(z_e, resp, cb)
            trace.em_updates.append((before, expected_distortion(z_e, resp, cb)))

    return TrainResult(enc, cb, dec, trace, cfg)


@dataclass
class Evaluation:
    recon: float
    perplexity: float
    cond_entropy: float
    hard_perplexity: float


def evaluate(enc: MLP, cb: Codebook, dec: MLP, mode: str, rows: np.ndarray) -> Evaluation:
    """Full-dataset metrics.  ``hard_perplexity`` uses nearest-codeword usage for either mode."""
    x = Tensor(rows)
    if mode == "hard_vqvae":
        fw = forward_hard(x, enc, cb, dec)
        a = AssignmentBatch.from_indices(fw.idx, cb.K)
        hard_a = a
        x_hat = fw.x_hat
    else:
        fw = forward_soft(x, enc, cb, dec)
        a = fw.assignment
        hard_a = AssignmentBatch.from_indices(np.argmax(a.probs, axis=1), cb.K)
        x_hat = fw.x_hat
    return Evaluation(
        recon=reconstruction_loss(x, x_hat).item(),
        perplexity=perplexity(a),
        cond_entropy=conditional_entropy(a),
        hard_perplexity=perplexity(hard_a),
    )


# checkpoints -----------------------------------------------------------------


def save_checkpoint(path, result: TrainResult) -> None:
    """Header line echoing the config, then ``[name]`` sections of matrix blocks."""
    cfg = result.config
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# vqib checkpoint " + " ".join(f"{k}={v}" for k, v in asdict(cfg).items()) + "\n")
        for j, (w, b) in enumerate(zip(result.encoder.weights, result.encoder.biases)):
            fh.write(f"[encoder.{j}.weight]\n")
            write_matrix(fh, w.data)
            fh.write(f"[encoder.{j}.bias]\n")
            write_matrix(fh, b.data[None, :])
        fh.write("[codebook]\n")
        write_matrix(fh, result.codebook.values)
        for j, (w, b) in enumerate(zip(result.decoder.weights, result.decoder.biases)):
            fh.write(f"[decoder.{j}.weight]\n")
            write_matrix(fh, w.data)
            fh.write(f"[decoder.{j}.bias]\n")
            write_matrix(fh, b.data[None, :])


def load_checkpoint(path) -> tuple[MLP, Codebook, MLP, dict]:
    """Returns (encoder, codebook, decoder, config echo as a str->str dict)."""
    sections: dict[str, np.ndarray] = {}
    echo: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        lines = numbered_lines(fh)
        for lineno, text in lines:
            text = text.strip()
            if text.startswith("#"):
                for tok in text.split()[3:]:
                    k, _, v = tok.partition("=")
                    echo[k] = v
            elif text.startswith("[") and text.endswith("]"):
                sections[text[1:-1]] = read_matrix(lines)
            else:
                raise ValueError(f"{path}: line {lineno}: unexpected content {text!r}")

    def layers(prefix):
        ws, bs, j = [], [], 0
        while f"{prefix}.{j}.weight" in sections:
            ws.append(sections[f"{prefix}.{j}.weight"])
            bs.append(sections[f"{prefix}.{j}.bias"][0])
            j += 1
        if not ws:
            raise ValueError(f"{path}: no {prefix} layers")
        return MLP(ws, bs)

    if "codebook" not in sections:
        raise ValueError(f"{path}: missing [codebook] section")
    mode = echo.get("mode", "hard_vqvae")
    cb = Codebook(sections["codebook"], learnable=mode == "hard_vqvae")
    return layers("encoder"), cb, layers("decoder"), echo
