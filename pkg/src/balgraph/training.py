"""Denoiser training: corruption, losses, hard-pair mining, and the hybrid
gradient strategy.

The per-block filter cutoffs receive an analytic gradient: during the
forward pass each block's positive-graph eigenpairs are recorded and treated
as constants with respect to the cutoffs, so the signal path reduces to a
chain of symmetric linear maps through which the squared-error loss is
back-propagated exactly. Everything upstream of the eigendecomposition (the
feature extractors and the metric factors) is updated with simultaneous
perturbation stochastic approximation, which needs only two forward passes
per step and sidesteps the ill-conditioned derivatives of eigenvectors near
degenerate eigenvalues.

Randomness is split into independent per-purpose streams (own-class noise,
other-class noise, SPSA directions), so a contrastive run with margin 0 and
a plain run consume identical noise and produce bit-identical models.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .denoiser import Block, DenoiserModel, denoise, denoise_with_trace
from .errors import DivergedLoss
from .spectral import EXACT, FilterSpec, SIGMOID, sigmoid_response

CONTRASTIVE = "contrastive"
PLAIN = "plain"


@dataclass(frozen=True)
class SpsaConfig:
    perturb_scale: float = 0.05  # c_0
    decay: float = 0.101  # gamma in c_k = c_0 / (k + 1)^gamma


@dataclass(frozen=True)
class LrSchedule:
    """Cosine annealing with warm restarts."""

    initial: float = 1e-3
    floor: float = 1e-5
    t0: int = 5
    mult: int = 1

    def at_epoch(self, epoch: int) -> float:
        period = self.t0
        t = epoch
        while self.mult > 1 and t >= period:
            t -= period
            period *= self.mult
        if self.mult == 1:
            t = epoch % self.t0
            period = self.t0
        return self.floor + 0.5 * (self.initial - self.floor) * (1.0 + math.cos(math.pi * t / period))


@dataclass(frozen=True)
class TrainConfig:
    noise_sigma: float = 0.3
    rho: float = 1.0
    lr: LrSchedule = field(default_factory=LrSchedule)
    epochs: int = 100
    patience: int = 10
    batch_size: int = 8
    spsa: SpsaConfig = field(default_factory=SpsaConfig)
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.rho < 0 or self.batch_size < 1:
            raise ValueError("noise_sigma, rho must be >= 0 and batch_size >= 1")
        if self.epochs < 0 or self.patience < 0:
            raise ValueError("epochs and patience must be >= 0")


# ---------------------------------------------------------------------------
# Corruption and losses
# ---------------------------------------------------------------------------

def corrupt(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise, seeded-deterministic via ``rng``."""
    x = np.asarray(x, dtype=float)
    return x + sigma * rng.standard_normal(x.shape)


def reconstruction_error(model: DenoiserModel, y: np.ndarray, x: np.ndarray) -> float:
    r = denoise(model, y) - np.asarray(x, dtype=float)
    return float(np.sum(r * r))


def loss_plain(model: DenoiserModel, pairs) -> float:
    """Sum of squared reconstruction errors over (noisy, clean) pairs."""
    return float(sum(reconstruction_error(model, y, x) for y, x in pairs))


def loss_contrastive(model: DenoiserModel, own_pairs, other_pairs, rho: float) -> float:
    """Own-class squared error plus a hinge pushing other-class error above rho."""
    if len(own_pairs) != len(other_pairs):
        raise ValueError("own and other pair lists must have equal length")
    total = 0.0
    for (y0, x0), (y1, x1) in zip(own_pairs, other_pairs):
        total += reconstruction_error(model, y0, x0)
        total += max(rho - reconstruction_error(model, y1, x1), 0.0)
    return float(total)


def mine_hard_pairs(class0_signals, class1_signals, count: int):
    """Greedy closest-pair matching without replacement.

    Repeatedly selects the globally closest unmatched cross-class pair in
    Euclidean (Frobenius) distance. If ``count`` exceeds the smaller class
    size it is truncated.
    """
    a = [np.asarray(s, dtype=float).ravel() for s in class0_signals]
    b = [np.asarray(s, dtype=float).ravel() for s in class1_signals]
    if not a or not b:
        raise ValueError("both classes must be nonempty")
    limit = min(len(a), len(b))
    if count > limit:
        import warnings

        warnings.warn(f"count {count} exceeds smaller class size; truncating to {limit}")
        count = limit
    A = np.stack(a)
    B = np.stack(b)
    d2 = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    order = np.argsort(d2, axis=None, kind="stable")
    used0 = np.zeros(len(a), dtype=bool)
    used1 = np.zeros(len(b), dtype=bool)
    pairs = []
    for flat in order:
        i, j = divmod(int(flat), len(b))
        if used0[i] or used1[j]:
            continue
        used0[i] = used1[j] = True
        pairs.append((i, j))
        if len(pairs) == count:
            break
    return pairs


# ---------------------------------------------------------------------------
# Analytic cutoff gradients
# ---------------------------------------------------------------------------

def _require_trainable(model: DenoiserModel) -> None:
    for blk in model.blocks:
        spec = blk.filter_spec
        if spec.mode != SIGMOID or spec.backend != EXACT:
            raise ValueError(
                "analytic cutoff gradients need sigmoid-mode, exact-backend filters"
            )


def _pair_error_and_grads(model: DenoiserModel, y, x):
    """Squared error of one pair plus its gradient w.r.t. every block cutoff.

    Eigenpairs are recorded on the forward pass and held constant; the
    residual gradient is pushed back through the symmetric per-block filter
    maps. Also returns the per-block eigenvalue ranges seen on this pass.
    """
    Y = np.asarray(y, dtype=float)
    X_target = np.asarray(x, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
        X_target = X_target[:, None]
    out, trace = denoise_with_trace(model, Y)
    r = out - X_target
    err = float(np.sum(r * r))
    grads = np.zeros(len(model.blocks))
    lam_ranges = []
    G = 2.0 * r
    for t in reversed(range(len(model.blocks))):
        spec = model.blocks[t].filter_spec
        tr = trace[t]
        lam = tr.eigen.eigenvalues
        V = tr.eigen.eigenvectors
        lam_ranges.append((float(lam.min()), float(lam.max())))
        g = sigmoid_response(lam, spec.omega, spec.alpha)
        gp = spec.alpha * g * (1.0 - g)
        b = tr.beta.astype(float)[:, None]
        u = V.T @ (b * tr.x_in)
        grads[t] = float(np.sum(G * (b * (V @ (gp[:, None] * u)))))
        G = b * (V @ (g[:, None] * (V.T @ (b * G))))
    lam_ranges.reverse()
    return err, grads, lam_ranges


def grad_spectral(model: DenoiserModel, own_pairs, other_pairs=None, rho: float = 0.0):
    """Analytic batch gradient of the (contrastive) loss w.r.t. block cutoffs.

    Returns ``(grads, loss, lam_ranges)`` where ``lam_ranges`` is the
    elementwise union of eigenvalue ranges observed per block, used to keep
    the trained cutoffs inside the responsive band of the sigmoid.
    """
    _require_trainable(model)
    n_blocks = len(model.blocks)
    grads = np.zeros(n_blocks)
    loss = 0.0
    lo = np.full(n_blocks, np.inf)
    hi = np.full(n_blocks, -np.inf)

    def fold(ranges):
        for t, (a, b) in enumerate(ranges):
            lo[t] = min(lo[t], a)
            hi[t] = max(hi[t], b)

    for y, x in own_pairs:
        err, g, ranges = _pair_error_and_grads(model, y, x)
        loss += err
        grads += g
        fold(ranges)
    if other_pairs is not None:
        for y, x in other_pairs:
            err, g, ranges = _pair_error_and_grads(model, y, x)
            fold(ranges)
            if err < rho:
                loss += rho - err
                grads -= g
    return grads, float(loss), list(zip(lo, hi))


# ---------------------------------------------------------------------------
# SPSA for the graph-shaping parameters
# ---------------------------------------------------------------------------

def grad_shape_spsa(loss_fn, theta: np.ndarray, c_k: float, rng: np.random.Generator) -> np.ndarray:
    """Two-evaluation simultaneous-perturbation gradient estimate.

    One Rademacher direction delta; the estimate is
    [L(theta + c delta) - L(theta - c delta)] / (2 c) * delta (elementwise
    inverse of a Rademacher vector is itself). Deterministic given ``rng``.
    """
    if c_k <= 0:
        raise ValueError("perturbation scale must be positive")
    delta = rng.choice([-1.0, 1.0], size=theta.shape)
    diff = loss_fn(theta + c_k * delta) - loss_fn(theta - c_k * delta)
    return (diff / (2.0 * c_k)) * delta


def get_omegas(model: DenoiserModel) -> np.ndarray:
    return np.array([b.filter_spec.omega for b in model.blocks], dtype=float)


def set_omegas(model: DenoiserModel, omegas) -> DenoiserModel:
    blocks = tuple(
        replace(b, filter_spec=replace(b.filter_spec, omega=float(w)))
        for b, w in zip(model.blocks, omegas)
    )
    return replace(model, blocks=blocks)


def _shape_arrays(block: Block):
    """Trainable shape arrays of one block, in a fixed order.

    Batch-norm running statistics are frozen at their initial values (the
    learnable scale and shift cover the same affine family in inference
    mode), so they are deliberately not part of the pack.
    """
    arrs = []
    for cb in block.extractor.conv_blocks:
        arrs.extend([cb.weights, cb.bias, cb.bn_scale, cb.bn_shift])
    arrs.append(block.extractor.proj_weight)
    arrs.append(np.array([block.extractor.proj_bias]))
    arrs.append(block.metric.q)
    return arrs


def get_shape_params(model: DenoiserModel) -> np.ndarray:
    return np.concatenate([a.ravel() for b in model.blocks for a in _shape_arrays(b)])


def set_shape_params(model: DenoiserModel, theta: np.ndarray) -> DenoiserModel:
    theta = np.asarray(theta, dtype=float)
    pos = 0

    def take(template: np.ndarray) -> np.ndarray:
        nonlocal pos
        n = template.size
        out = theta[pos : pos + n].reshape(template.shape)
        pos += n
        return out

    new_blocks = []
    for blk in model.blocks:
        convs = []
        for cb in blk.extractor.conv_blocks:
            convs.append(
                replace(
                    cb,
                    weights=take(cb.weights),
                    bias=take(cb.bias),
                    bn_scale=take(cb.bn_scale),
                    bn_shift=take(cb.bn_shift),
                )
            )
        proj_w = take(blk.extractor.proj_weight)
        proj_b = float(take(np.zeros(1))[0])
        q = take(blk.metric.q)
        extractor = replace(
            blk.extractor, conv_blocks=tuple(convs), proj_weight=proj_w, proj_bias=proj_b
        )
        new_blocks.append(replace(blk, extractor=extractor, metric=replace(blk.metric, q=q)))
    if pos != theta.size:
        raise ValueError(f"parameter vector has {theta.size} entries, model needs {pos}")
    return replace(model, blocks=tuple(new_blocks))


@dataclass(frozen=True)
class ParamPartition:
    """Disjoint, jointly exhaustive view of the trainable parameters."""

    spectral_params: np.ndarray  # per-block cutoffs
    shape_params: np.ndarray  # flattened extractor + metric parameters


def partition_params(model: DenoiserModel) -> ParamPartition:
    return ParamPartition(spectral_params=get_omegas(model), shape_params=get_shape_params(model))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainResult:
    model: DenoiserModel
    log: list[dict]
    best_epoch: int
    best_val: float
    stopped_early: bool


def _batches(items, size):
    for k in range(0, len(items), size):
        yield items[k : k + size]


def train_denoiser(
    own_train,
    own_val,
    other_train,
    other_val,
    config: TrainConfig,
    model: DenoiserModel,
    loss: str = CONTRASTIVE,
) -> TrainResult:
    """Train one class-conditioned denoiser.

    ``own_*`` are clean node-major signals of the model's class, ``other_*``
    of the opposite class (used only by the contrastive hinge). Corruption,
    forward, loss, and the two-way update run per batch; early stopping
    tracks the validation loss with the configured patience and the
    best-validation model is returned. Per-epoch records land in ``log``.
    """
    if loss not in (CONTRASTIVE, PLAIN):
        raise ValueError(f"unknown loss {loss!r}")
    contrastive = loss == CONTRASTIVE
    if not own_train or not own_val:
        raise ValueError("training and validation splits must be nonempty")
    if contrastive and (not other_train or not other_val):
        raise ValueError("contrastive training needs other-class slices")
    _require_trainable(model)

    rng_noise_own = np.random.default_rng(config.seed + 1)
    rng_noise_other = np.random.default_rng(config.seed + 2)
    rng_spsa = np.random.default_rng(config.seed + 3)
    rng_val = np.random.default_rng(config.seed + 4)

    if contrastive:
        # Mining fixes the matching; epochs walk the pairs in own-sample
        # index order so the own-class noise stream is consumed exactly as
        # in a plain run (margin 0 then reproduces plain training).
        train_pairs = sorted(
            mine_hard_pairs(own_train, other_train, min(len(own_train), len(other_train)))
        )
        val_pairs = sorted(mine_hard_pairs(own_val, other_val, min(len(own_val), len(other_val))))
    else:
        train_pairs = [(i, None) for i in range(len(own_train))]
        val_pairs = [(i, None) for i in range(len(own_val))]

    # Validation corruption is drawn once so epoch-to-epoch comparisons and
    # early stopping are deterministic.
    val_own = [(corrupt(own_val[i], config.noise_sigma, rng_val), own_val[i]) for i, _ in val_pairs]
    val_other = None
    if contrastive:
        val_other = [
            (corrupt(other_val[j], config.noise_sigma, rng_val), other_val[j])
            for _, j in val_pairs
        ]

    def validation_loss(m: DenoiserModel) -> float:
        if contrastive:
            return loss_contrastive(m, val_own, val_other, config.rho)
        return loss_plain(m, val_own)

    best_model = model
    best_val = math.inf
    best_epoch = -1
    stalled = 0
    stopped_early = False
    log: list[dict] = []
    step = 0

    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        lr = config.lr.at_epoch(epoch)
        epoch_loss = 0.0
        for batch in _batches(train_pairs, config.batch_size):
            own_batch = [
                (corrupt(own_train[i], config.noise_sigma, rng_noise_own), own_train[i])
                for i, _ in batch
            ]
            other_batch = None
            if contrastive:
                other_batch = [
                    (corrupt(other_train[j], config.noise_sigma, rng_noise_other), other_train[j])
                    for _, j in batch
                ]

            grads_w, batch_loss, lam_ranges = grad_spectral(
                model, own_batch, other_batch, config.rho if contrastive else 0.0
            )
            epoch_loss += batch_loss

            theta = get_shape_params(model)
            c_k = config.spsa.perturb_scale / (step + 1) ** config.spsa.decay

            def shape_loss(vec):
                m = set_shape_params(model, vec)
                if contrastive:
                    return loss_contrastive(m, own_batch, other_batch, config.rho)
                return loss_plain(m, own_batch)

            ghat = grad_shape_spsa(shape_loss, theta, c_k, rng_spsa)

            omegas = get_omegas(model) - lr * grads_w
            lo = np.array([r[0] for r in lam_ranges])
            hi = np.array([r[1] for r in lam_ranges])
            omegas = np.clip(omegas, lo, hi)
            model = set_omegas(model, omegas)
            model = set_shape_params(model, theta - lr * ghat)
            step += 1

        val = validation_loss(model)
        wall_ms = (time.perf_counter() - t_start) * 1000.0
        log.append(
            {
                "epoch": epoch,
                "train_loss": float(epoch_loss),
                "val_loss": float(val),
                "lr": float(lr),
                "wall_ms": float(wall_ms),
            }
        )
        if not (np.isfinite(epoch_loss) and np.isfinite(val)):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        if val < best_val:
            best_val = val
            best_model = model
            best_epoch = epoch
            stalled = 0
        else:
            stalled += 1
            if stalled > config.patience:
                stopped_early = True
                break

    return TrainResult(
        model=best_model,
        log=log,
        best_epoch=best_epoch,
        best_val=best_val,
        stopped_early=stopped_early,
    )
