"""Bidirectional linear maps, the training objective, and the minibatch loop.

The objective for a pair of batches is the sum of the entropic transport
distances in both directions plus a weighted round-trip (back-translation)
penalty:

    transport(fwd(X), Y) + transport(bwd(Y), X)
        + beta * mean_i [ (1 - cos(x_i, bwd(fwd(x_i)))) + (1 - cos(y_i, fwd(bwd(y_i)))) ]

All gradients are analytic: the transport terms chain the unrolled scaling
gradient through the pairwise-distance backward pass into the map weights,
and the cosine terms are differentiated in closed form. The round-trip sum is
normalized by batch size so that beta's scale does not depend on the batch.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet, sample_batch, truncate
from .metric import pairwise_distance_backward, pairwise_distance_matrix
from .sinkhorn import SinkhornConfig, sinkhorn_backward, sinkhorn_distance

DEGENERATE_NORM = 1e-12
SMOOTHING_WINDOW = 50

__all__ = [
    "LinearMap",
    "TrainConfig",
    "LossParts",
    "StepRecord",
    "TrainReport",
    "TrainingDiverged",
    "Adam",
    "apply_map",
    "back_translation_loss",
    "total_loss",
    "loss_gradients",
    "train",
    "save_map",
    "load_map",
]


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient turns non-finite; carries the step index."""

    def __init__(self, step: int, what: str):
        super().__init__(f"training diverged at step {step}: {what}")
        self.step = step


@dataclass(frozen=True)
class LinearMap:
    """A square linear transformation sending row vector x to x @ matrix.T."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.float64, order="C")
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"map matrix must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("map matrix contains non-finite entries")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the minibatch training loop."""

    steps: int
    beta: float = 0.1
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    batch_size: int = 512
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    train_vocab: int = 10000
    batch_marginals: str = "uniform"

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_marginals not in ("uniform", "frequency"):
            raise ValueError("batch_marginals must be 'uniform' or 'frequency'")


@dataclass(frozen=True)
class LossParts:
    """Objective value with its three reported components (round_trip unweighted)."""

    total: float
    transport_fwd: float
    transport_bwd: float
    round_trip: float


@dataclass(frozen=True)
class StepRecord:
    step: int
    total: float
    transport_fwd: float
    transport_bwd: float
    round_trip: float


@dataclass(frozen=True)
class TrainReport:
    """Per-step loss records, the final maps, and wall-clock seconds.

    ``best_step`` is the step whose trailing moving average of the total loss
    (window 50) is lowest; ``best_fwd``/``best_bwd`` are the maps at that step.
    """

    records: tuple[StepRecord, ...]
    fwd: LinearMap
    bwd: LinearMap
    wall_clock: float
    best_step: int
    best_fwd: LinearMap
    best_bwd: LinearMap


class Adam(object):
    """Adaptive-moment gradient updates over a list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [np.array(p) for p in params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            self.params[i] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def apply_map(m: LinearMap, x: np.ndarray) -> np.ndarray:
    """Transform a batch of row vectors: returns ``x @ m.matrix.T``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != m.dim:
        raise ValueError(f"input dimension {x.shape[1]} does not match map dimension {m.dim}")
    return x @ m.matrix.T


def _cosine_rows(x: np.ndarray, z: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx = np.linalg.norm(x, axis=1)
    nz = np.linalg.norm(z, axis=1)
    if np.any(nx < DEGENERATE_NORM) or np.any(nz < DEGENERATE_NORM):
        raise ValueError(f"degenerate row in {what}")
    cos = np.sum(x * z, axis=1) / (nx * nz)
    return cos, nx, nz


def _round_trip(
    xb: np.ndarray, yb: np.ndarray, fwd: LinearMap, bwd: LinearMap, want_grads: bool
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Round-trip cosine loss, normalized by batch size, with optional map gradients."""
    b = xb.shape[0]
    wf, wb = fwd.matrix, bwd.matrix
    hx = xb @ wf.T          # fwd(x)
    zx = hx @ wb.T          # bwd(fwd(x))
    hy = yb @ wb.T          # bwd(y)
    zy = hy @ wf.T          # fwd(bwd(y))
    cos_x, nx, nzx = _cosine_rows(xb, zx, "round trip of the source batch")
    cos_y, ny, nzy = _cosine_rows(yb, zy, "round trip of the target batch")
    loss = float((1.0 - cos_x).sum() + (1.0 - cos_y).sum()) / b
    if not want_grads:
        return loss, None, None
    # d(1 - cos(x, z))/dz = -(x/(|x||z|) - cos * z/|z|^2), summed rows scaled by 1/b
    dzx = -(xb / (nx * nzx)[:, None] - (cos_x / nzx**2)[:, None] * zx) / b
    dzy = -(yb / (ny * nzy)[:, None] - (cos_y / nzy**2)[:, None] * zy) / b
    dwb = dzx.T @ hx
    dhx = dzx @ wb
    dwf = dhx.T @ xb
    dwf += dzy.T @ hy
    dhy = dzy @ wf
    dwb += dhy.T @ yb
    return loss, dwf, dwb


def back_translation_loss(
    xb: np.ndarray, yb: np.ndarray, fwd: LinearMap, bwd: LinearMap
) -> float:
    """Mean round-trip cosine deviation over both directions; zero iff every
    row returns to its own direction after the forward-backward composition."""
    xb = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    loss, _, _ = _round_trip(xb, yb, fwd, bwd, want_grads=False)
    return loss


def _marginal(weights: np.ndarray | None, b: int) -> np.ndarray:
    if weights is None:
        return np.full(b, 1.0 / b)
    return np.asarray(weights, dtype=np.float64)


def total_loss(
    xb: np.ndarray,
    yb: np.ndarray,
    rb: np.ndarray,
    cb: np.ndarray,
    fwd: LinearMap,
    bwd: LinearMap,
    cfg: TrainConfig,
) -> LossParts:
    """Objective on one batch pair: both transport distances plus the weighted round trip."""
    xb = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    mg = pairwise_distance_matrix(apply_map(fwd, xb), yb)
    mf = pairwise_distance_matrix(apply_map(bwd, yb), xb)
    t_fwd = sinkhorn_distance(mg, rb, cb, cfg.sinkhorn)
    t_bwd = sinkhorn_distance(mf, cb, rb, cfg.sinkhorn)
    rt = back_translation_loss(xb, yb, fwd, bwd)
    return LossParts(
        total=t_fwd + t_bwd + cfg.beta * rt,
        transport_fwd=t_fwd,
        transport_bwd=t_bwd,
        round_trip=rt,
    )


def loss_gradients(
    xb: np.ndarray,
    yb: np.ndarray,
    rb: np.ndarray,
    cb: np.ndarray,
    fwd: LinearMap,
    bwd: LinearMap,
    cfg: TrainConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Full objective gradient with respect to both map matrices.

    The round-trip term couples the two maps, so each map receives
    contributions both from its own transport term and from the round trip.
    """
    xb = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    gx = apply_map(fwd, xb)
    mg = pairwise_distance_matrix(gx, yb)
    dmg = sinkhorn_backward(mg, rb, cb, cfg.sinkhorn)
    dgx, _ = pairwise_distance_backward(gx, yb, dmg)
    dfwd = dgx.T @ xb

    fy = apply_map(bwd, yb)
    mf = pairwise_distance_matrix(fy, xb)
    dmf = sinkhorn_backward(mf, cb, rb, cfg.sinkhorn)
    dfy, _ = pairwise_distance_backward(fy, xb, dmf)
    dbwd = dfy.T @ yb

    if cfg.beta > 0:
        _, dwf_rt, dwb_rt = _round_trip(xb, yb, fwd, bwd, want_grads=True)
        dfwd += cfg.beta * dwf_rt
        dbwd += cfg.beta * dwb_rt
    return dfwd, dbwd


def train(
    x: EmbeddingSet,
    y: EmbeddingSet,
    cfg: TrainConfig,
    init: tuple[LinearMap, LinearMap] | None = None,
) -> tuple[LinearMap, LinearMap, TrainReport]:
    """Minibatch descent on the full objective, deterministic for a fixed seed.

    Training restricts each side to its ``cfg.train_vocab`` most frequent
    words (``0`` means the full vocabulary), samples one batch per language
    proportionally to the marginal weights, and applies one Adam update per
    step to both maps. Within a batch the transport marginals are uniform by
    default, since frequency-proportional sampling already gives every drawn
    token equal mass; ``batch_marginals="frequency"`` renormalizes the global
    weights over the batch instead.
    """
    if not (x.normalized and y.normalized):
        raise ValueError("both embedding sets must be l2-normalized before training")
    if x.dim != y.dim:
        raise ValueError(f"embedding dimensions differ: {x.dim} vs {y.dim}")
    if init is None:
        init = (LinearMap.identity(x.dim), LinearMap.identity(x.dim))
    fwd0, bwd0 = init
    if fwd0.dim != x.dim or bwd0.dim != x.dim:
        raise ValueError("initial maps do not match the embedding dimension")

    if cfg.train_vocab > 0:
        x = truncate(x, cfg.train_vocab)
        y = truncate(y, cfg.train_vocab)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(
        [fwd0.matrix, bwd0.matrix],
        lr=cfg.learning_rate,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    records: list[StepRecord] = []
    started = time.perf_counter()
    best_avg = np.inf
    best_step = -1
    best_params = (fwd0.matrix.copy(), bwd0.matrix.copy())
    recent: list[float] = []

    for step in range(cfg.steps):
        ix = sample_batch(x, cfg.batch_size, rng)
        iy = sample_batch(y, cfg.batch_size, rng)
        xb = x.vectors[ix]
        yb = y.vectors[iy]
        if cfg.batch_marginals == "frequency":
            rb = x.weights[ix] / x.weights[ix].sum()
            cb = y.weights[iy] / y.weights[iy].sum()
        else:
            rb = _marginal(None, cfg.batch_size)
            cb = _marginal(None, cfg.batch_size)
        fwd = LinearMap(opt.params[0])
        bwd = LinearMap(opt.params[1])
        parts = total_loss(xb, yb, rb, cb, fwd, bwd, cfg)
        if not np.isfinite(parts.total):
            raise TrainingDiverged(step, "non-finite loss")
        dfwd, dbwd = loss_gradients(xb, yb, rb, cb, fwd, bwd, cfg)
        if not (np.all(np.isfinite(dfwd)) and np.all(np.isfinite(dbwd))):
            raise TrainingDiverged(step, "non-finite gradient")
        opt.step([dfwd, dbwd])
        records.append(
            StepRecord(step, parts.total, parts.transport_fwd, parts.transport_bwd, parts.round_trip)
        )
        recent.append(parts.total)
        if len(recent) > SMOOTHING_WINDOW:
            recent.pop(0)
        avg = sum(recent) / len(recent)
        if avg < best_avg:
            best_avg = avg
            best_step = step
            best_params = (opt.params[0].copy(), opt.params[1].copy())

    fwd = LinearMap(opt.params[0])
    bwd = LinearMap(opt.params[1])
    if best_step < 0:
        best_step = 0
    report = TrainReport(
        records=tuple(records),
        fwd=fwd,
        bwd=bwd,
        wall_clock=time.perf_counter() - started,
        best_step=best_step,
        best_fwd=LinearMap(best_params[0]),
        best_bwd=LinearMap(best_params[1]),
    )
    return fwd, bwd, report


def save_map(m: LinearMap, path) -> None:
    """Checkpoint format: first line ``d d``, then d rows of d repr floats."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{m.dim} {m.dim}\n")
        for row in m.matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_map(path) -> LinearMap:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != header[1]:
            raise ValueError(f"malformed checkpoint header {header!r}")
        d = int(header[0])
        rows = np.empty((d, d))
        for i in range(d):
            parts = fh.readline().split()
            if len(parts) != d:
                raise ValueError(f"checkpoint row {i} has {len(parts)} values, expected {d}")
            rows[i] = [float(v) for v in parts]
    return LinearMap(rows)
