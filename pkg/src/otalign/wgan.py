"""Adversarial pretraining of the two linear maps against gradient-penalty critics.

This phase minimizes the unregularized transport distance in its dual form:
per direction, a two-layer critic estimates the score gap between real target
batches and mapped source batches while its input gradients are penalized
toward unit norm, and the map descends the negated critic score (optionally
plus the round-trip term). The resulting maps serve as the starting point for
the entropic-transport phase, which is sensitive to initialization.

The critic is a two-layer scorer with a leaky-rectifier hidden layer
(slope 0.01). All gradients, including the penalty's dependence on the critic
weights, are computed in closed form; the rectifier's derivative is piecewise
constant, so the penalty contributes no gradient to the biases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, sample_batch
from .transfer import Adam, LinearMap, TrainingDiverged, _round_trip, apply_map

LEAK = 0.01

__all__ = [
    "Critic",
    "WganConfig",
    "critic_score",
    "critic_input_gradients",
    "gradient_penalty",
    "pretrain",
    "init_critic",
    "save_critic",
    "load_critic",
]


@dataclass(frozen=True)
class Critic:
    """Two-layer scorer: hidden weights (h, d) + bias (h,), output weights (h,) + scalar bias."""

    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self) -> None:
        w1 = np.array(self.w_hidden, dtype=np.float64, order="C")
        b1 = np.array(self.b_hidden, dtype=np.float64)
        w2 = np.array(self.w_out, dtype=np.float64)
        if w1.ndim != 2:
            raise ValueError("hidden weights must be a matrix")
        h = w1.shape[0]
        if b1.shape != (h,) or w2.shape != (h,):
            raise ValueError("bias/output shapes do not match the hidden width")
        for a in (w1, b1, w2):
            if not np.all(np.isfinite(a)):
                raise ValueError("critic parameters contain non-finite entries")
            a.setflags(write=False)
        object.__setattr__(self, "w_hidden", w1)
        object.__setattr__(self, "b_hidden", b1)
        object.__setattr__(self, "w_out", w2)
        object.__setattr__(self, "b_out", float(self.b_out))

    @property
    def in_dim(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[0]


@dataclass(frozen=True)
class WganConfig:
    """Hyperparameters for the adversarial phase (gradient-penalty defaults)."""

    steps: int
    critic_steps: int = 5
    gp: float = 10.0
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 512
    hidden: int = 500
    seed: int = 0
    beta: float = 0.1
    use_back_translation: bool = True

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        for name in ("critic_steps", "gp", "learning_rate", "batch_size", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAK * z)


def _leaky_slope(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAK)


def init_critic(dim: int, hidden: int, rng: np.random.Generator) -> Critic:
    """Gaussian init scaled to keep activations of order one at either layer."""
    w1 = rng.normal(0.0, np.sqrt(2.0 / dim), size=(hidden, dim))
    w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden)
    return Critic(w1, np.zeros(hidden), w2, 0.0)


def critic_score(c: Critic, v: np.ndarray) -> np.ndarray:
    """Forward pass: one score per input row."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[1] != c.in_dim:
        raise ValueError(f"input dimension {v.shape[1]} does not match critic dimension {c.in_dim}")
    return _leaky(v @ c.w_hidden.T + c.b_hidden) @ c.w_out + c.b_out


def critic_input_gradients(c: Critic, v: np.ndarray) -> np.ndarray:
    """Gradient of each row's score with respect to that input row."""
    v = np.asarray(v, dtype=np.float64)
    slope = _leaky_slope(v @ c.w_hidden.T + c.b_hidden)
    return (slope * c.w_out) @ c.w_hidden


def gradient_penalty(
    c: Critic,
    real_batch: np.ndarray,
    fake_batch: np.ndarray,
    rng: np.random.Generator,
    gp: float = 10.0,
) -> float:
    """Mean squared deviation of the critic's input-gradient norms from 1, scaled by gp.

    Evaluated at per-row uniform interpolates between real and fake rows, as in
    gradient-penalty critic training.
    """
    real_batch = np.asarray(real_batch, dtype=np.float64)
    fake_batch = np.asarray(fake_batch, dtype=np.float64)
    if real_batch.shape != fake_batch.shape:
        raise ValueError("real and fake batches must share a shape")
    eps = rng.uniform(size=(real_batch.shape[0], 1))
    mix = eps * real_batch + (1.0 - eps) * fake_batch
    norms = np.linalg.norm(critic_input_gradients(c, mix), axis=1)
    return float(gp * np.mean((norms - 1.0) ** 2))


def _penalty_with_grads(
    c: Critic, mix: np.ndarray, gp: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalty at given interpolates plus its gradients w.r.t. w_hidden and w_out.

    The hidden slopes are piecewise constant in the parameters, so the biases
    receive no penalty gradient (matching reverse-mode differentiation of the
    rectifier).
    """
    b = mix.shape[0]
    slope = _leaky_slope(mix @ c.w_hidden.T + c.b_hidden)   # (b, h)
    sw = slope * c.w_out                                     # (b, h)
    g = sw @ c.w_hidden                                      # (b, d) input gradients
    norms = np.linalg.norm(g, axis=1)
    penalty = float(gp * np.mean((norms - 1.0) ** 2))
    # dpenalty/dg rows
    q = (gp * 2.0 / b) * ((norms - 1.0) / np.maximum(norms, 1e-12))[:, None] * g
    dw1 = sw.T @ q                                           # (h, d)
    dw2 = slope * (q @ c.w_hidden.T)                         # (b, h)
    return penalty, dw1, dw2.sum(axis=0)


class _Workspace:
    """Preallocated single-precision buffers for the adversarial training loop.

    Per-update intermediates of shape (3b, h) and (b, h) are large enough that
    repeated allocation is page-fault bound on modest machines; reusing the
    buffers keeps every update in cache.
    """

    def __init__(self, b: int, d: int, h: int, dtype=np.float32):
        self.b = b
        self.v = np.empty((3 * b, d), dtype)
        self.z = np.empty((3 * b, h), dtype)
        self.slope = np.empty((3 * b, h), dtype)
        self.tmp2b = np.empty((2 * b, h), dtype)
        self.tmpb = np.empty((b, h), dtype)
        self.cvec = np.empty(2 * b, dtype)
        self.cvec[:b] = -1.0 / b
        self.cvec[b:] = 1.0 / b


def _slope_into(z: np.ndarray, out: np.ndarray) -> None:
    dtype = z.dtype
    np.greater(z, 0, out=out)
    np.multiply(out, dtype.type(1.0 - LEAK), out=out)
    np.add(out, dtype.type(LEAK), out=out)


def _critic_update(
    opt: Adam,
    real: np.ndarray,
    fake: np.ndarray,
    gp: float,
    rng: np.random.Generator,
    ws: _Workspace,
) -> float:
    """One step maximizing score(real) - score(fake) - penalty; returns the gap.

    Runs fused over the stacked [real; fake; interpolate] block in the working
    dtype of the optimizer parameters (single precision during pretraining).
    """
    w1, b1, w2 = opt.params[0], opt.params[1], opt.params[2]
    dtype = w1.dtype
    b = ws.b
    one = dtype.type(1.0)
    eps = rng.uniform(size=(b, 1)).astype(dtype)
    v, z, slope = ws.v, ws.z, ws.slope
    v[:b] = real
    v[b : 2 * b] = fake
    np.multiply(real, eps, out=v[2 * b :])
    v[2 * b :] += (one - eps) * fake
    np.matmul(v, w1.T, out=z)
    z += b1
    _slope_into(z, slope)

    # dz_ij = cvec_i * slope_ij * w2_j, so the score gradients factor through
    # slope alone: dw1 = w2 (col-scale) . (cvec*slope)^T V, db1 likewise.
    np.multiply(slope[: 2 * b], ws.cvec[:, None], out=ws.tmp2b)
    dw1 = ws.tmp2b.T @ v[: 2 * b]
    dw1 *= w2[:, None]
    db1 = ws.tmp2b.sum(axis=0)
    db1 *= w2
    # activations for the two scored blocks; reuses the same buffer
    np.multiply(slope[: 2 * b], z[: 2 * b], out=ws.tmp2b)
    scores = ws.tmp2b @ w2
    gap = float(scores[:b].mean() - scores[b:].mean())
    dw2 = ws.tmp2b.T @ ws.cvec

    # gradient penalty on the interpolate block
    np.multiply(slope[2 * b :], w2, out=ws.tmpb)             # sw_mix
    g = ws.tmpb @ w1                                         # input gradients
    norms = np.linalg.norm(g, axis=1)
    q = (2.0 * gp / b) * ((norms - one) / np.maximum(norms, dtype.type(1e-12)))[:, None] * g
    dw1 += ws.tmpb.T @ q
    np.matmul(q, w1.T, out=ws.tmpb)
    ws.tmpb *= slope[2 * b :]
    dw2 += ws.tmpb.sum(axis=0)

    opt.step([dw1, db1, dw2, np.zeros(1, dtype=dtype)])
    return gap


def _map_adversarial_grad(
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    source: np.ndarray,
    mapped: np.ndarray,
    ws: _Workspace,
) -> np.ndarray:
    """Gradient of ``-mean(score(mapped))`` w.r.t. the map matrix, mapped = source @ W.T."""
    b = mapped.shape[0]
    dtype = w1.dtype
    z = ws.tmpb
    np.matmul(mapped, w1.T, out=z)
    z += b1
    _slope_into(z, z)
    z *= w2
    dmix = (z @ w1) * dtype.type(-1.0 / b)
    return dmix.T @ source


def pretrain(
    x: EmbeddingSet,
    y: EmbeddingSet,
    cfg: WganConfig,
    callback=None,
) -> tuple[LinearMap, LinearMap]:
    """Adversarially train both maps from identity, returning the final maps.

    Per generator step the two critics take ``cfg.critic_steps`` maximization
    updates each, then both maps take one descent step on the negated critic
    scores (plus the round-trip term unless disabled). Deterministic for a
    fixed seed. ``callback(step, info)``, when given, receives the critic
    score gaps per direction after each generator step.
    """
    if not (x.normalized and y.normalized):
        raise ValueError("both embedding sets must be l2-normalized before pretraining")
    if x.dim != y.dim:
        raise ValueError(f"embedding dimensions differ: {x.dim} vs {y.dim}")
    d = x.dim
    rng = np.random.default_rng(cfg.seed)
    critic_y = init_critic(d, cfg.hidden, rng)   # separates real Y from mapped X
    critic_x = init_critic(d, cfg.hidden, rng)   # separates real X from mapped Y

    # The adversarial phase runs in single precision: it only needs to place
    # the maps near a good basin, and the entropic phase refines in double.
    f32 = np.float32

    def as_params(c: Critic) -> list[np.ndarray]:
        return [c.w_hidden.astype(f32), c.b_hidden.astype(f32),
                c.w_out.astype(f32), np.zeros(1, dtype=f32)]

    opt_cy = Adam(as_params(critic_y), lr=cfg.learning_rate,
                  beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    opt_cx = Adam(as_params(critic_x), lr=cfg.learning_rate,
                  beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    opt_maps = Adam([np.eye(d, dtype=f32), np.eye(d, dtype=f32)],
                    lr=cfg.learning_rate, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    xv = x.vectors.astype(f32)
    yv = y.vectors.astype(f32)
    ws = _Workspace(cfg.batch_size, d, cfg.hidden)

    for step in range(cfg.steps):
        gap_fwd = gap_bwd = 0.0
        for _ in range(cfg.critic_steps):
            wf, wb = opt_maps.params
            xb = xv[sample_batch(x, cfg.batch_size, rng)]
            yb = yv[sample_batch(y, cfg.batch_size, rng)]
            gap_fwd = _critic_update(opt_cy, yb, xb @ wf.T, cfg.gp, rng, ws)
            gap_bwd = _critic_update(opt_cx, xb, yb @ wb.T, cfg.gp, rng, ws)
        wf, wb = opt_maps.params
        xb = xv[sample_batch(x, cfg.batch_size, rng)]
        yb = yv[sample_batch(y, cfg.batch_size, rng)]
        dfwd = _map_adversarial_grad(*opt_cy.params[:3], xb, xb @ wf.T, ws)
        dbwd = _map_adversarial_grad(*opt_cx.params[:3], yb, yb @ wb.T, ws)
        if cfg.use_back_translation and cfg.beta > 0:
            _, dwf_rt, dwb_rt = _round_trip(
                xb.astype(np.float64), yb.astype(np.float64),
                LinearMap(wf), LinearMap(wb), want_grads=True,
            )
            dfwd += (cfg.beta * dwf_rt).astype(f32)
            dbwd += (cfg.beta * dwb_rt).astype(f32)
        if not (np.all(np.isfinite(dfwd)) and np.all(np.isfinite(dbwd))):
            raise TrainingDiverged(step, "non-finite map gradient in adversarial phase")
        opt_maps.step([dfwd, dbwd])
        if not (np.all(np.isfinite(opt_maps.params[0])) and np.all(np.isfinite(opt_maps.params[1]))):
            raise TrainingDiverged(step, "non-finite map parameters in adversarial phase")
        if callback is not None:
            callback(step, {"gap_fwd": gap_fwd, "gap_bwd": gap_bwd})

    return LinearMap(opt_maps.params[0]), LinearMap(opt_maps.params[1])


def save_critic(c: Critic, path) -> None:
    """Text checkpoint: one ``rows cols`` header per tensor, vectors as one row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        h, d = c.w_hidden.shape
        fh.write(f"{h} {d}\n")
        for row in c.w_hidden:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(f"1 {h}\n")
        fh.write(" ".join(repr(float(v)) for v in c.b_hidden) + "\n")
        fh.write(f"1 {h}\n")
        fh.write(" ".join(repr(float(v)) for v in c.w_out) + "\n")
        fh.write("1 1\n")
        fh.write(repr(float(c.b_out)) + "\n")


def load_critic(path) -> Critic:
    with open(path, encoding="utf-8") as fh:
        def read_tensor() -> np.ndarray:
            rows, cols = (int(t) for t in fh.readline().split())
            data = np.empty((rows, cols))
            for i in range(rows):
                parts = fh.readline().split()
                if len(parts) != cols:
                    raise ValueError(f"tensor row has {len(parts)} values, expected {cols}")
                data[i] = [float(v) for v in parts]
            return data

        w1 = read_tensor()
        b1 = read_tensor()[0]
        w2 = read_tensor()[0]
        b2 = float(read_tensor()[0, 0])
    return Critic(w1, b1, w2, b2)
