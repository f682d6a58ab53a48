"""Self-supervised pre-training of the recurrent backbone.

Two augmented views of the same anchored window are pushed together by an
invariance term while a variance hinge keeps embedding dimensions spread
out (anti-collapse) and a covariance penalty decorrelates them. The
pre-trained backbone is then frozen and only the classification head is
fit with labels.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .features import Standardizer
from .models import (
    BackboneNet,
    EarlyStopper,
    RecurrentModel,
    RecurrentNet,
    TrainConfig,
    TrainHistory,
    TrainingError,
    init_parameters,
    train_xent,
)


class CollapseError(TrainingError):
    """Raised when pre-training collapses to a near-constant embedding."""


@dataclass(frozen=True)
class VicregConfig:
    lambda_inv: float = 25.0
    mu_var: float = 25.0
    nu_cov: float = 1.0
    gamma: float = 1.0
    var_eps: float = 1e-4
    use_expander: bool = True

    def __post_init__(self):
        if min(self.lambda_inv, self.mu_var, self.nu_cov) < 0:
            raise ValueError("loss coefficients must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass(frozen=True)
class AugmentConfig:
    max_lag: int = 4
    scale_mean: float = 1.0
    scale_sd: float = 0.05
    noise_mean: float = 0.0
    noise_sd: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.scale_sd < 0 or self.noise_sd < 0:
            raise ValueError("augmentation sds must be >= 0")


@dataclass
class VicregTerms:
    total: torch.Tensor
    invariance: torch.Tensor
    variance: torch.Tensor
    covariance: torch.Tensor


def vicreg_loss(z_a: torch.Tensor, z_b: torch.Tensor, cfg: VicregConfig) -> VicregTerms:
    """Weighted sum of invariance, variance-hinge, and covariance terms.

    invariance: mean over the batch of the squared distance between paired rows.
    variance (per branch): mean over dims of max(0, gamma - sqrt(Var + eps)).
    covariance (per branch): sum of squared off-diagonal covariance entries / d,
    with covariance computed from mean-centered columns and 1/(n-1).
    """
    n, d = z_a.shape
    if n < 2:
        raise ValueError("vicreg_loss needs a batch of at least 2")
    inv = ((z_a - z_b) ** 2).sum(dim=1).mean()

    def branch(z):
        std = torch.sqrt(z.var(dim=0, unbiased=True) + cfg.var_eps)
        var_term = torch.relu(cfg.gamma - std).sum() / d
        zc = z - z.mean(dim=0)
        cov = (zc.T @ zc) / (n - 1)
        off = cov - torch.diag(torch.diag(cov))
        return var_term, (off**2).sum() / d

    var_a, cov_a = branch(z_a)
    var_b, cov_b = branch(z_b)
    variance = var_a + var_b
    covariance = cov_a + cov_b
    total = cfg.lambda_inv * inv + cfg.mu_var * variance + cfg.nu_cov * covariance
    return VicregTerms(total=total, invariance=inv, variance=variance, covariance=covariance)


def augment_window(
    trial: np.ndarray,
    anchor: int,
    sequence_len: int,
    cfg: AugmentConfig,
    sample_index: int,
    view_index: int,
) -> tuple[np.ndarray, bool]:
    """One augmented view of the window ending at ``anchor`` within a trial.

    The whole window is shifted by a random lag, then per-feature scaled by
    N(scale_mean, scale_sd^2) draws, then perturbed entrywise by additive
    Gaussian noise. Deterministic for a given (rng_seed, sample, view) key.
    Lags that would leave the trial are clamped; the flag reports it.
    """
    n = trial.shape[0]
    if not sequence_len - 1 <= anchor < n:
        raise ValueError("anchor does not admit a full window")
    rng = np.random.default_rng(
        np.random.SeedSequence((cfg.rng_seed, int(sample_index), int(view_index)))
    )
    lag = int(rng.integers(-cfg.max_lag, cfg.max_lag + 1)) if cfg.max_lag else 0
    shifted = anchor + lag
    clamped_anchor = int(np.clip(shifted, sequence_len - 1, n - 1))
    clamped = clamped_anchor != shifted

    view = trial[clamped_anchor - sequence_len + 1 : clamped_anchor + 1].astype(float, copy=True)
    scale = rng.normal(cfg.scale_mean, cfg.scale_sd, size=trial.shape[1])
    view *= scale
    view += rng.normal(cfg.noise_mean, cfg.noise_sd, size=view.shape)
    return view, clamped


def anchor_pool(trials: list[np.ndarray], sequence_len: int, max_lag: int, stride: int = 5):
    """(trial_index, anchor) pairs on a fixed stride, away from trial edges."""
    pool = []
    for t, trial in enumerate(trials):
        lo = sequence_len - 1 + max_lag
        hi = trial.shape[0] - 1 - max_lag
        pool.extend((t, a) for a in range(lo, hi + 1, stride))
    return pool


def _view_batch(
    trials: list[np.ndarray],
    pool: list[tuple[int, int]],
    picks: np.ndarray,
    sequence_len: int,
    cfg: AugmentConfig,
    view_offset: int,
) -> tuple[np.ndarray, np.ndarray]:
    a_views, b_views = [], []
    for p in picks:
        t, anchor = pool[p]
        va, _ = augment_window(trials[t], anchor, sequence_len, cfg, p, view_offset)
        vb, _ = augment_window(trials[t], anchor, sequence_len, cfg, p, view_offset + 1)
        a_views.append(va)
        b_views.append(vb)
    return np.stack(a_views), np.stack(b_views)


class _Expander(nn.Module):
    """Optional 2-layer projection used only during pre-training.

    The variance and covariance pressure acts on this wider space, leaving
    the backbone embedding free to keep its discriminative structure.
    """

    def __init__(self, dim: int, width: int = 512):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, width), nn.ReLU(), nn.Linear(width, width))

    def forward(self, z):
        return self.net(z)


@dataclass
class PretrainResult:
    backbone: BackboneNet
    history: TrainHistory
    embedding_std: np.ndarray = field(default_factory=lambda: np.zeros(0))


def pretrain_backbone(
    backbone: BackboneNet,
    train_trials: list[np.ndarray],
    val_trials: list[np.ndarray],
    vic_cfg: VicregConfig,
    aug_cfg: AugmentConfig,
    train_cfg: TrainConfig,
    anchor_stride: int = 5,
    max_steps_per_epoch: int = 12,
    max_val_anchors: int = 1024,
) -> PretrainResult:
    """Minimize the view-pair loss over augmented anchors with AdamW.

    Early stopping tracks the loss on fixed validation view pairs. Aborts
    with a diagnostic if every embedding dimension stays nearly constant
    for 5 consecutive epochs (representation collapse).
    """
    if not train_trials or not val_trials:
        raise TrainingError("empty training or validation trials")
    seq_len = train_cfg.sequence_len
    pool = anchor_pool(train_trials, seq_len, aug_cfg.max_lag, anchor_stride)
    val_pool = anchor_pool(val_trials, seq_len, aug_cfg.max_lag, anchor_stride)
    if not pool or not val_pool:
        raise TrainingError("trials too short for the configured sequence length")
    if len(val_pool) > max_val_anchors:
        keep = np.random.default_rng(train_cfg.rng_seed).choice(
            len(val_pool), size=max_val_anchors, replace=False
        )
        val_pool = [val_pool[i] for i in np.sort(keep)]

    dtype = train_cfg.torch_dtype
    backbone.to(dtype)
    expander = None
    params = list(backbone.parameters())
    if vic_cfg.use_expander:
        expander = _Expander(backbone.lstm.hidden_size).to(dtype)
        init_parameters(expander, train_cfg.rng_seed + 1)
        params += list(expander.parameters())

    opt = torch.optim.AdamW(
        params,
        lr=train_cfg.lr_stagewise,
        betas=train_cfg.adam_betas,
        eps=train_cfg.adam_eps,
        weight_decay=train_cfg.weight_decay,
    )
    rng = np.random.default_rng(train_cfg.rng_seed)
    # Validation pairs use an rng key disjoint from any epoch's training keys.
    val_cfg = dataclasses.replace(aug_cfg, rng_seed=aug_cfg.rng_seed + 1)
    val_picks = np.arange(len(val_pool))

    def embed(x: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """(backbone embedding, loss-space projection)."""
        emb = backbone(torch.from_numpy(x).to(dtype))
        return emb, expander(emb) if expander is not None else emb

    def val_loss_and_std() -> tuple[float, np.ndarray]:
        losses = []
        stds = []
        with torch.no_grad():
            for i in range(0, len(val_picks), train_cfg.batch_size):
                picks = val_picks[i : i + train_cfg.batch_size]
                if len(picks) < 2:
                    continue
                va, vb = _view_batch(val_trials, val_pool, picks, seq_len, val_cfg, 0)
                emb_a, za = embed(va)
                _, zb = embed(vb)
                losses.append(vicreg_loss(za, zb, vic_cfg).total.item())
                stds.append(emb_a.std(dim=0, unbiased=True).numpy())
        return float(np.mean(losses)), np.mean(stds, axis=0)

    history = TrainHistory()
    stopper = EarlyStopper(train_cfg.patience)
    best_state = None
    flat_epochs = 0
    emb_std = np.zeros(0)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(pool))
        n_steps = min(max_steps_per_epoch, int(np.ceil(len(order) / train_cfg.batch_size)))
        epoch_loss = 0.0
        for step in range(n_steps):
            picks = order[step * train_cfg.batch_size : (step + 1) * train_cfg.batch_size]
            if len(picks) < 2:
                continue
            va, vb = _view_batch(train_trials, pool, picks, seq_len, aug_cfg, 2 * epoch)
            opt.zero_grad()
            terms = vicreg_loss(embed(va)[1], embed(vb)[1], vic_cfg)
            if not torch.isfinite(terms.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step}")
            terms.total.backward()
            opt.step()
            epoch_loss += terms.total.item()
        history.train_loss.append(epoch_loss / max(n_steps, 1))

        vloss, emb_std = val_loss_and_std()
        history.val_loss.append(vloss)

        if np.all(emb_std < 0.01):
            flat_epochs += 1
            if flat_epochs >= 5:
                raise CollapseError(
                    f"embedding collapsed: all dims std < 0.01 for 5 epochs "
                    f"(epoch {epoch}, max std {emb_std.max():.2e})"
                )
        else:
            flat_epochs = 0

        improved, stop = stopper.update(epoch, vloss)
        if improved:
            best_state = {k: v.detach().clone() for k, v in backbone.state_dict().items()}
        if stop:
            history.stopped_epoch = epoch
            break
    else:
        history.stopped_epoch = train_cfg.max_epochs

    history.best_epoch = stopper.best_epoch
    backbone.load_state_dict(best_state)
    return PretrainResult(backbone=backbone, history=history, embedding_std=emb_std)


def train_head_on_frozen(
    backbone: BackboneNet,
    standardizer: Standardizer,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    n_classes: int = 7,
    wamp_threshold: float = 0.0,
) -> tuple[RecurrentModel, TrainHistory]:
    """Fit the softmax head on top of the frozen pre-trained backbone.

    Backbone parameters are bit-identical before and after; only the head
    is optimized (at the stagewise learning rate).
    """
    net = RecurrentNet(
        input_dim=backbone.lstm.input_size,
        hidden_dim=backbone.lstm.hidden_size,
        n_classes=n_classes,
    ).to(cfg.torch_dtype)
    init_parameters(net, cfg.rng_seed)
    net.backbone.load_state_dict(backbone.state_dict())
    history = train_xent(net, train, val, cfg, mode="head_only")
    model = RecurrentModel(
        net=net,
        standardizer=standardizer,
        sequence_len=cfg.sequence_len,
        wamp_threshold=wamp_threshold,
        stage="finetuned",
    )
    return model, history


def export_embeddings(backbone: BackboneNet, windows: np.ndarray, batch: int = 1024) -> np.ndarray:
    """One embedding per window, in order."""
    dtype = next(backbone.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(windows), batch):
            xb = torch.from_numpy(np.ascontiguousarray(windows[i : i + batch])).to(dtype)
            out.append(backbone(xb).double().numpy())
    if not out:
        return np.zeros((0, backbone.lstm.hidden_size))
    return np.concatenate(out)
