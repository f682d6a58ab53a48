"""Classifiers: closed-form LDA and the recurrent network family.

The recurrent architecture is an LSTM (24 -> 128) followed by two 128-unit
dense layers with layer normalization and ReLU (the backbone), and a linear
softmax head. Supervised training minimizes mean cross-entropy with AdamW
(decoupled weight decay) and early stopping on validation loss; the
parameters of the best validation epoch are kept.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .dataset import MotionClass, N_CLASSES
from .features import FEATURE_ORDER, Standardizer, apply_standardizer, fit_standardizer

INPUT_DIM = 24
HIDDEN_DIM = 128
LAYER_NORM_EPS = 1e-5
_POSTERIOR_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    weight_decay: float = 1e-3
    lr_end_to_end: float = 1e-4
    lr_stagewise: float = 1e-3
    patience: int = 10
    max_epochs: int = 200
    rng_seed: int = 0
    sequence_len: int = 40
    sequence_stride: int = 10
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("batch_size", "weight_decay", "lr_end_to_end", "lr_stagewise",
                     "patience", "max_epochs", "sequence_len", "sequence_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class Decision:
    cls: int
    confidence: float
    posterior: np.ndarray


@dataclass
class Decisions:
    """Batch of per-frame decisions; posterior rows follow the model's class order."""

    classes: np.ndarray
    confidence: np.ndarray
    posterior: np.ndarray

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, i: int) -> Decision:
        return Decision(int(self.classes[i]), float(self.confidence[i]), self.posterior[i])


def stable_posterior(logits: np.ndarray) -> np.ndarray:
    """Softmax with entries kept strictly inside (0, 1).

    Underflowed entries are floored and the row renormalized, so the top
    posterior never reaches exactly 1 even for extreme logit gaps.
    """
    z = np.asarray(logits, dtype=float)
    one = z.ndim == 1
    z = np.atleast_2d(z)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p = np.maximum(p, _POSTERIOR_FLOOR)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if one else p


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

@dataclass
class LdaModel:
    class_means: np.ndarray
    covariance: np.ndarray
    inv_covariance: np.ndarray
    priors: np.ndarray
    classes: np.ndarray
    standardizer: Standardizer
    wamp_threshold: float = 0.0


def lda_fit(
    features: np.ndarray,
    labels: np.ndarray,
    classes=None,
    ridge: float = 1e-6,
    wamp_threshold: float = 0.0,
) -> LdaModel:
    """Fit shared-covariance LDA with ridge-regularized pooled covariance.

    ``features`` are raw (unstandardized); the standardizer is fit here and
    stored with the model. Priors come from class frequencies.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if classes is None:
        classes = np.arange(N_CLASSES)
    classes = np.asarray(classes)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least 2 classes present to fit")
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} frames to fit, got {n}")

    standardizer = fit_standardizer(x)
    xs = apply_standardizer(standardizer, x)

    means = np.zeros((len(classes), d))
    scatter = np.zeros((d, d))
    counts = np.zeros(len(classes))
    for i, c in enumerate(classes):
        rows = xs[y == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {MotionClass(int(c)).name} has no training frames")
        means[i] = rows.mean(axis=0)
        centered = rows - means[i]
        scatter += centered.T @ centered
        counts[i] = rows.shape[0]

    cov = scatter / max(n - len(classes), 1)
    cov += ridge * (np.trace(cov) / d) * np.eye(d)
    return LdaModel(
        class_means=means,
        covariance=cov,
        inv_covariance=np.linalg.inv(cov),
        priors=counts / counts.sum(),
        classes=classes,
        standardizer=standardizer,
        wamp_threshold=wamp_threshold,
    )


def lda_predict(model: LdaModel, features: np.ndarray) -> Decisions:
    """Posterior via softmax over the linear Gaussian discriminants."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    d = model.class_means.shape[1]
    if x.shape[1] != d:
        raise ValueError(f"expected feature dimension {d}, got {x.shape[1]}")
    xs = apply_standardizer(model.standardizer, x)
    w = model.inv_covariance @ model.class_means.T  # (d, k)
    bias = -0.5 * np.einsum("kd,dk->k", model.class_means, w) + np.log(model.priors)
    post = stable_posterior(xs @ w + bias)
    idx = post.argmax(axis=1)
    return Decisions(
        classes=model.classes[idx],
        confidence=post[np.arange(len(post)), idx],
        posterior=post,
    )


# ---------------------------------------------------------------------------
# Recurrent network
# ---------------------------------------------------------------------------

class BackboneNet(nn.Module):
    def __init__(self, input_dim: int = INPUT_DIM, hidden_dim: int = HIDDEN_DIM):
        super().__init__()
        self.lstm = nn.LSTM(input_dim, hidden_dim, batch_first=True)
        self.dense1 = nn.Linear(hidden_dim, hidden_dim)
        self.norm1 = nn.LayerNorm(hidden_dim, eps=LAYER_NORM_EPS)
        self.dense2 = nn.Linear(hidden_dim, hidden_dim)
        self.norm2 = nn.LayerNorm(hidden_dim, eps=LAYER_NORM_EPS)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(x)
        h = out[:, -1]
        h = torch.relu(self.norm1(self.dense1(h)))
        return torch.relu(self.norm2(self.dense2(h)))


class RecurrentNet(nn.Module):
    def __init__(
        self,
        input_dim: int = INPUT_DIM,
        hidden_dim: int = HIDDEN_DIM,
        n_classes: int = N_CLASSES,
    ):
        super().__init__()
        self.backbone = BackboneNet(input_dim, hidden_dim)
        self.head = nn.Linear(hidden_dim, n_classes)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        emb = self.backbone(x)
        return emb, self.head(emb)


def init_parameters(net: nn.Module, seed: int) -> None:
    """Seeded uniform fan-in init; LSTM forget-gate bias set to 1."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            if p.ndim >= 2:
                bound = 1.0 / np.sqrt(p.shape[1])
                p.uniform_(-bound, bound, generator=g)
            else:
                p.zero_()
        for m in net.modules():
            if isinstance(m, nn.LayerNorm):
                m.weight.fill_(1.0)
            elif isinstance(m, nn.LSTM):
                h = m.hidden_size
                m.bias_ih_l0[h : 2 * h] = 1.0  # torch gate order: i, f, g, o


def create_recurrent(
    seed: int,
    input_dim: int = INPUT_DIM,
    hidden_dim: int = HIDDEN_DIM,
    n_classes: int = N_CLASSES,
    dtype: torch.dtype = torch.float32,
) -> RecurrentNet:
    net = RecurrentNet(input_dim, hidden_dim, n_classes).to(dtype)
    init_parameters(net, seed)
    return net


@dataclass
class RecurrentModel:
    net: RecurrentNet
    standardizer: Standardizer
    sequence_len: int
    wamp_threshold: float = 0.0
    classes: np.ndarray = field(default_factory=lambda: np.arange(N_CLASSES))
    stage: str = "supervised"


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


class EarlyStopper:
    """Halt after ``patience`` epochs without strict validation improvement.

    Ties do not count as improvement, so the earliest best epoch wins.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


def build_sequences(
    trials: list[np.ndarray],
    trial_labels: list[np.ndarray] | None,
    sequence_len: int,
    stride: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Sliding windows within each trial; each window is labeled by its last frame."""
    xs, ys = [], []
    for t, frames in enumerate(trials):
        frames = np.asarray(frames)
        n = frames.shape[0]
        if n < sequence_len:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(frames, sequence_len, axis=0)
        ends = np.arange(sequence_len - 1, n, stride)
        xs.append(windows[ends - sequence_len + 1].transpose(0, 2, 1))
        if trial_labels is not None:
            ys.append(np.asarray(trial_labels[t])[ends])
    if not xs:
        return np.zeros((0, sequence_len, 0)), (np.zeros(0, dtype=int) if trial_labels is not None else None)
    x = np.concatenate(xs)
    y = np.concatenate(ys) if trial_labels is not None else None
    return x, y


def _mean_xent(net_apply, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            logits = net_apply(x[i : i + batch])
            total += nn.functional.cross_entropy(logits, y[i : i + batch], reduction="sum").item()
    return total / len(x)


def train_xent(
    net: RecurrentNet,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    mode: str = "end_to_end",
) -> TrainHistory:
    """Train with AdamW + early stopping; the net ends at its best-validation state.

    ``head_only`` freezes the backbone; since frozen embeddings are constant,
    they are computed once and the head is trained on the cache, which is
    numerically identical to running the full forward every epoch.
    """
    if mode not in ("end_to_end", "head_only"):
        raise ValueError(f"unknown mode {mode!r}")
    x_tr, y_tr = train
    x_va, y_va = val
    if len(x_tr) == 0 or len(x_va) == 0:
        raise TrainingError("empty training or validation split")

    dtype = cfg.torch_dtype
    net.to(dtype)
    y_tr_t = torch.from_numpy(np.asarray(y_tr)).long()
    y_va_t = torch.from_numpy(np.asarray(y_va)).long()

    if mode == "head_only":
        for p in net.backbone.parameters():
            p.requires_grad_(False)
        x_tr_t = _embed_batches(net.backbone, np.asarray(x_tr), dtype, cfg.batch_size)
        x_va_t = _embed_batches(net.backbone, np.asarray(x_va), dtype, cfg.batch_size)
        apply = net.head
        params = list(net.head.parameters())
        lr = cfg.lr_stagewise
    else:
        x_tr_t = torch.from_numpy(np.asarray(x_tr)).to(dtype)
        x_va_t = torch.from_numpy(np.asarray(x_va)).to(dtype)
        apply = lambda xb: net(xb)[1]
        params = list(net.parameters())
        lr = cfg.lr_end_to_end

    opt = torch.optim.AdamW(
        params, lr=lr, betas=cfg.adam_betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay
    )
    rng = np.random.default_rng(cfg.rng_seed)
    history = TrainHistory()
    stopper = EarlyStopper(cfg.patience)
    best_state = None

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(x_tr_t))
        epoch_loss = 0.0
        for bi, start in enumerate(range(0, len(perm), cfg.batch_size)):
            idx = torch.from_numpy(perm[start : start + cfg.batch_size])
            opt.zero_grad()
            loss = nn.functional.cross_entropy(apply(x_tr_t[idx]), y_tr_t[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(idx)
        history.train_loss.append(epoch_loss / len(x_tr_t))

        val_loss = _mean_xent(apply, x_va_t, y_va_t, cfg.batch_size)
        history.val_loss.append(val_loss)
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = copy.deepcopy(net.state_dict())
        if stop:
            history.stopped_epoch = epoch
            break
    else:
        history.stopped_epoch = cfg.max_epochs

    history.best_epoch = stopper.best_epoch
    net.load_state_dict(best_state)
    if mode == "head_only":
        for p in net.backbone.parameters():
            p.requires_grad_(True)
    return history


def _embed_batches(
    backbone: BackboneNet, x: np.ndarray, dtype: torch.dtype, batch: int = 1024
) -> torch.Tensor:
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch):
            xb = torch.from_numpy(x[i : i + batch]).to(dtype)
            out.append(backbone(xb))
    return torch.cat(out) if out else torch.zeros(0)


def forward_windows(
    net: RecurrentNet, windows: np.ndarray, batch: int = 1024
) -> tuple[np.ndarray, np.ndarray]:
    """Batched (embedding, logits) over (n, seq_len, input_dim) windows."""
    dtype = next(net.parameters()).dtype
    embs, logits = [], []
    with torch.no_grad():
        for i in range(0, len(windows), batch):
            xb = torch.from_numpy(np.ascontiguousarray(windows[i : i + batch])).to(dtype)
            e, lg = net(xb)
            embs.append(e.double().numpy())
            logits.append(lg.double().numpy())
    if not embs:
        k = net.head.out_features
        return np.zeros((0, net.head.in_features)), np.zeros((0, k))
    return np.concatenate(embs), np.concatenate(logits)


def sliding_infer(model: RecurrentModel, frames: np.ndarray) -> Decisions:
    """Decisions over a frame stream; frames before one full window yield NM.

    Frame t (t >= sequence_len - 1) is decided from the window ending at t,
    matching what the online decoder sees tick by tick.
    """
    x = apply_standardizer(model.standardizer, np.asarray(frames))
    n = x.shape[0]
    k = len(model.classes)
    nm_idx = int(np.where(model.classes == int(MotionClass.NM))[0][0])
    posterior = np.zeros((n, k))
    posterior[:, nm_idx] = 1.0
    classes = np.full(n, int(MotionClass.NM))
    confidence = np.ones(n)
    if n >= model.sequence_len:
        windows = np.lib.stride_tricks.sliding_window_view(
            x, model.sequence_len, axis=0
        ).transpose(0, 2, 1)
        _, logits = forward_windows(model.net, windows)
        post = stable_posterior(logits)
        idx = post.argmax(axis=1)
        t0 = model.sequence_len - 1
        posterior[t0:] = post
        classes[t0:] = model.classes[idx]
        confidence[t0:] = post[np.arange(len(post)), idx]
    return Decisions(classes=classes, confidence=confidence, posterior=posterior)


class LdaDecoder:
    """Stateless per-frame decoder for the control loop."""

    def __init__(self, model: LdaModel):
        self.model = model
        self.wamp_threshold = model.wamp_threshold

    def reset(self) -> None:
        pass

    def push(self, frame: np.ndarray) -> tuple[int, float]:
        d = lda_predict(self.model, frame[None, :])
        return int(d.classes[0]), float(d.confidence[0])


class RecurrentDecoder:
    """Sliding-window decoder: re-runs the last ``sequence_len`` frames per tick."""

    def __init__(self, model: RecurrentModel):
        self.model = model
        self.wamp_threshold = model.wamp_threshold
        self._dtype = next(model.net.parameters()).dtype
        self.reset()

    def reset(self) -> None:
        self._buf = np.zeros((self.model.sequence_len, INPUT_DIM))
        self._count = 0

    def push(self, frame: np.ndarray) -> tuple[int, float]:
        xs = apply_standardizer(self.model.standardizer, frame)
        self._buf = np.roll(self._buf, -1, axis=0)
        self._buf[-1] = xs
        self._count += 1
        if self._count < self.model.sequence_len:
            return int(MotionClass.NM), 1.0
        with torch.no_grad():
            xb = torch.from_numpy(self._buf[None]).to(self._dtype)
            _, logits = self.model.net(xb)
        post = stable_posterior(logits.double().numpy()[0])
        idx = int(post.argmax())
        return int(self.model.classes[idx]), float(post[idx])


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    net: nn.Module,
    n_samples: int = 200,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must be a deterministic closure over ``net``. Parameters must
    be double precision; ``n_samples`` coordinates are sampled across all
    trainable tensors. Relative error uses max(|g_a|, |g_fd|, 1e-6) in the
    denominator to avoid blowups on near-zero gradients.
    """
    params = [p for p in net.parameters() if p.requires_grad]
    if not params or n_samples <= 0:
        raise ValueError("no parameters selected for gradient checking")
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("grad_check requires double-precision parameters")

    for p in params:
        p.grad = None
    loss_fn().backward()
    grads = [p.grad.detach().clone().reshape(-1) for p in params]
    flats = [p.data.reshape(-1) for p in params]
    sizes = np.array([f.numel() for f in flats])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    rng = np.random.default_rng(seed)
    chosen = rng.choice(offsets[-1], size=min(n_samples, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat_idx in chosen:
            t = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            j = int(flat_idx - offsets[t])
            orig = flats[t][j].item()
            flats[t][j] = orig + h
            with torch.enable_grad():
                lp = loss_fn().item()
            flats[t][j] = orig - h
            with torch.enable_grad():
                lm = loss_fn().item()
            flats[t][j] = orig
            fd = (lp - lm) / (2 * h)
            ga = grads[t][j].item()
            rel = abs(ga - fd) / max(abs(ga), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "MYOMODEL"
_MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _write_arrays(handle, arrays: list[tuple[str, np.ndarray]]) -> None:
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        dims = " ".join(str(d) for d in arr.shape)
        handle.write(f"ARRAY {name} {arr.dtype.str} {arr.ndim} {dims}\n".encode("ascii"))
        handle.write(arr.tobytes())


def _read_arrays(raw: bytes, pos: int, count: int) -> dict[str, np.ndarray]:
    arrays = {}
    for _ in range(count):
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ModelFormatError("truncated array header")
        parts = raw[pos:nl].decode("ascii").split()
        if parts[0] != "ARRAY":
            raise ModelFormatError(f"expected ARRAY record, got {parts[0]!r}")
        name, dtype_str, ndim = parts[1], parts[2], int(parts[3])
        shape = tuple(int(d) for d in parts[4 : 4 + ndim])
        dt = np.dtype(dtype_str)
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        start = nl + 1
        if len(raw) < start + nbytes:
            raise ModelFormatError(f"truncated payload for array {name!r}")
        arrays[name] = np.frombuffer(raw[start : start + nbytes], dtype=dt).reshape(shape).copy()
        pos = start + nbytes
    if pos != len(raw):
        raise ModelFormatError("unexpected trailing bytes")
    return arrays


def _header_and_arrays(kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    import io

    lines = [f"{_MODEL_MAGIC} {_MODEL_VERSION}", f"kind {kind}"]
    for key, value in meta.items():
        lines.append(f"{key} {value}")
    lines.append(f"arrays {len(arrays)}")
    lines.append("END")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("ascii"))
    _write_arrays(buf, arrays)
    return buf.getvalue()


def save_model(model, path: str | Path) -> None:
    """Write a model artifact; round-trips exactly (bit-identical arrays)."""
    if isinstance(model, LdaModel):
        meta = {
            "feature_order": FEATURE_ORDER,
            "wamp_threshold": repr(float(model.wamp_threshold)),
        }
        arrays = [
            ("classes", model.classes.astype("<i8")),
            ("class_means", model.class_means.astype("<f8")),
            ("covariance", model.covariance.astype("<f8")),
            ("inv_covariance", model.inv_covariance.astype("<f8")),
            ("priors", model.priors.astype("<f8")),
            ("std_mean", model.standardizer.mean.astype("<f8")),
            ("std_std", model.standardizer.std.astype("<f8")),
        ]
        Path(path).write_bytes(_header_and_arrays("lda", meta, arrays))
        return

    if isinstance(model, RecurrentModel):
        net = model.net
        meta = {
            "feature_order": FEATURE_ORDER,
            "wamp_threshold": repr(float(model.wamp_threshold)),
            "stage": model.stage,
            "sequence_len": model.sequence_len,
            "input_dim": net.backbone.lstm.input_size,
            "hidden_dim": net.backbone.lstm.hidden_size,
            "n_classes": net.head.out_features,
            "dtype": str(next(net.parameters()).dtype).removeprefix("torch."),
        }
        arrays = [
            ("classes", model.classes.astype("<i8")),
            ("std_mean", model.standardizer.mean.astype("<f8")),
            ("std_std", model.standardizer.std.astype("<f8")),
        ]
        for name, tensor in net.state_dict().items():
            arrays.append((f"param.{name}", tensor.numpy()))
        Path(path).write_bytes(_header_and_arrays("recurrent", meta, arrays))
        return

    raise TypeError(f"cannot serialize {type(model).__name__}")


def load_model(path: str | Path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl].decode("ascii", errors="replace").split() != [
        _MODEL_MAGIC,
        str(_MODEL_VERSION),
    ]:
        raise ModelFormatError(f"{path}: bad magic line")
    meta: dict[str, str] = {}
    pos = nl + 1
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ModelFormatError(f"{path}: unterminated header")
        line = raw[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "END":
            break
        key, _, value = line.partition(" ")
        meta[key] = value

    arrays = _read_arrays(raw, pos, int(meta["arrays"]))
    kind = meta["kind"]
    standardizer = Standardizer(mean=arrays["std_mean"], std=arrays["std_std"])
    if kind == "lda":
        return LdaModel(
            class_means=arrays["class_means"],
            covariance=arrays["covariance"],
            inv_covariance=arrays["inv_covariance"],
            priors=arrays["priors"],
            classes=arrays["classes"],
            standardizer=standardizer,
            wamp_threshold=float(meta["wamp_threshold"]),
        )
    if kind == "recurrent":
        net = RecurrentNet(
            input_dim=int(meta["input_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            n_classes=int(meta["n_classes"]),
        ).to(getattr(torch, meta["dtype"]))
        state = {
            name.removeprefix("param."): torch.from_numpy(arr)
            for name, arr in arrays.items()
            if name.startswith("param.")
        }
        net.load_state_dict(state)
        return RecurrentModel(
            net=net,
            standardizer=standardizer,
            sequence_len=int(meta["sequence_len"]),
            wamp_threshold=float(meta["wamp_threshold"]),
            classes=arrays["classes"],
            stage=meta["stage"],
        )
    raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
