import numpy as np
import pytest
import torch

from myobench.features import Standardizer
from myobench.models import (
    EarlyStopper,
    RecurrentModel,
    RecurrentNet,
    TrainConfig,
    TrainingError,
    build_sequences,
    create_recurrent,
    forward_windows,
    lda_fit,
    load_model,
    save_model,
    sliding_infer,
    stable_posterior,
    train_xent,
)

NM = 6


def identity_standardizer(d=24):
    return Standardizer(mean=np.zeros(d), std=np.ones(d))


def toy_sequences(seed=0, n_per_class=120, seq_len=10, d=24, n_classes=3, spread=0.3):
    """Separable sequence data: each class has a distinct mean pattern."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, d)) * 2.0
    xs, ys = [], []
    for c in range(n_classes):
        x = means[c] + spread * rng.standard_normal((n_per_class, seq_len, d))
        xs.append(x)
        ys.append(np.full(n_per_class, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(x))
    return x[perm], y[perm]


def test_forward_shapes_and_posterior():
    net = create_recurrent(seed=0)
    x = torch.randn(5, 12, 24)
    emb, logits = net(x)
    assert emb.shape == (5, 128)
    assert logits.shape == (5, 7)
    post = stable_posterior(logits.detach().numpy())
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((post > 0) & (post < 1))


def test_zero_weights_give_uniform_posterior():
    net = create_recurrent(seed=1)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    _, logits = net(torch.randn(3, 8, 24))
    post = stable_posterior(logits.detach().numpy())
    assert np.allclose(post, 1.0 / 7.0, atol=1e-9)


def test_posterior_logit_shift_invariance():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((10, 7))
    assert np.allclose(stable_posterior(z), stable_posterior(z + 55.5), atol=1e-9)


def test_seeded_init_deterministic():
    a = create_recurrent(seed=3)
    b = create_recurrent(seed=3)
    c = create_recurrent(seed=4)
    for (pa, pb) in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert any(
        not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_forget_gate_bias_initialized_to_one():
    net = create_recurrent(seed=5)
    h = net.backbone.lstm.hidden_size
    assert torch.all(net.backbone.lstm.bias_ih_l0[h : 2 * h] == 1.0)
    assert torch.all(net.backbone.lstm.bias_hh_l0[h : 2 * h] == 0.0)


# --- early stopping --------------------------------------------------------

def test_early_stopper_constant_sequence():
    stopper = EarlyStopper(patience=10)
    stops = []
    for epoch in range(1, 12):
        _, stop = stopper.update(epoch, 1.0)
        stops.append(stop)
    assert stops == [False] * 10 + [True]  # halts at epoch 11
    assert stopper.best_epoch == 1


def test_early_stopper_keeps_earliest_best_on_ties():
    stopper = EarlyStopper(patience=3)
    stopper.update(1, 0.5)
    stopper.update(2, 0.5)
    stopper.update(3, 0.4)
    stopper.update(4, 0.4)
    assert stopper.best_epoch == 3


def test_early_stopper_resets_on_improvement():
    stopper = EarlyStopper(patience=2)
    assert stopper.update(1, 1.0) == (True, False)
    assert stopper.update(2, 1.1) == (False, False)
    assert stopper.update(3, 0.9) == (True, False)
    assert stopper.update(4, 0.95) == (False, False)
    assert stopper.update(5, 0.99) == (False, True)


def test_training_returns_best_epoch_parameters():
    x, y = toy_sequences(seed=6)
    xv, yv = toy_sequences(seed=7, n_per_class=30)
    cfg = TrainConfig(batch_size=64, max_epochs=8, patience=3, rng_seed=0,
                      lr_end_to_end=1e-3, sequence_len=10)
    net = create_recurrent(seed=8)
    history = train_xent(net, (x, y), (xv, yv), cfg, "end_to_end")
    best = history.best_epoch
    assert history.val_loss[best - 1] == min(history.val_loss)
    # The restored parameters reproduce the best validation loss exactly.
    model = RecurrentModel(net, identity_standardizer(), sequence_len=10)
    _, logits = forward_windows(net, xv)
    losses = -np.log(stable_posterior(logits)[np.arange(len(yv)), yv])
    assert np.mean(losses) == pytest.approx(history.val_loss[best - 1], rel=1e-5)


# --- AdamW oracles ---------------------------------------------------------

def test_adamw_zero_gradients_shrink_by_decay_factor():
    lr, wd = 1e-3, 1e-2
    net = create_recurrent(seed=9)
    before = [p.detach().clone() for p in net.parameters()]
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=wd)
    opt.zero_grad()
    loss = 0.0 * net(torch.randn(4, 6, 24))[1].sum()
    loss.backward()
    opt.step()
    for p, b in zip(net.parameters(), before):
        assert torch.allclose(p, b * (1 - lr * wd), rtol=0, atol=0)


def test_adamw_lr_zero_is_identity():
    theta = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64, requires_grad=True)
    opt = torch.optim.AdamW([theta], lr=0.0, weight_decay=1e-3)
    for _ in range(3):
        opt.zero_grad()
        (0.5 * (theta**2).sum()).backward()
        opt.step()
    assert torch.equal(theta, torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64))


def test_adamw_without_decay_matches_closed_form_adam():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    curv = np.array([1.0, 2.0, 0.5])
    theta0 = np.array([1.0, -1.5, 2.0])

    theta = torch.tensor(theta0, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.AdamW([theta], lr=lr, betas=(b1, b2), eps=eps, weight_decay=0.0)
    for _ in range(3):
        opt.zero_grad()
        (0.5 * torch.tensor(curv) * theta**2).sum().backward()
        opt.step()

    # Hand-rolled Adam trajectory on the same quadratic loss.
    ref = theta0.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    for t in range(1, 4):
        g = curv * ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        ref = ref - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert np.allclose(theta.detach().numpy(), ref, atol=1e-12)


# --- end-to-end sanity -----------------------------------------------------

def test_separable_dataset_reaches_training_accuracy():
    x, y = toy_sequences(seed=10, n_per_class=100)
    xv, yv = toy_sequences(seed=11, n_per_class=25)
    cfg = TrainConfig(batch_size=128, max_epochs=50, patience=10, rng_seed=1,
                      lr_end_to_end=1e-3, sequence_len=10)
    net = create_recurrent(seed=12)
    train_xent(net, (x, y), (xv, yv), cfg, "end_to_end")
    _, logits = forward_windows(net, x)
    accuracy = np.mean(logits.argmax(axis=1) == y)
    assert accuracy >= 0.95


def test_training_deterministic_given_seed():
    x, y = toy_sequences(seed=13, n_per_class=40)
    xv, yv = toy_sequences(seed=14, n_per_class=10)
    cfg = TrainConfig(batch_size=64, max_epochs=3, patience=2, rng_seed=5,
                      sequence_len=10)
    nets = []
    for _ in range(2):
        net = create_recurrent(seed=15)
        train_xent(net, (x, y), (xv, yv), cfg, "end_to_end")
        nets.append(net)
    for pa, pb in zip(nets[0].parameters(), nets[1].parameters()):
        assert torch.equal(pa, pb)


def test_non_finite_loss_reports_epoch_and_batch():
    x, y = toy_sequences(seed=16, n_per_class=20)
    x[0, 0, 0] = np.nan
    cfg = TrainConfig(batch_size=512, max_epochs=2, patience=2, sequence_len=10)
    net = create_recurrent(seed=17)
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train_xent(net, (x, y), (x, y), cfg, "end_to_end")


def test_empty_split_rejected():
    cfg = TrainConfig(sequence_len=10)
    net = create_recurrent(seed=18)
    empty = (np.zeros((0, 10, 24)), np.zeros(0, dtype=int))
    full = toy_sequences(seed=19, n_per_class=5)
    with pytest.raises(TrainingError):
        train_xent(net, empty, full, cfg)
    with pytest.raises(TrainingError):
        train_xent(net, full, empty, cfg)


# --- sliding inference -----------------------------------------------------

def recurrent_model(seed=20, seq_len=8):
    net = create_recurrent(seed=seed)
    return RecurrentModel(net, identity_standardizer(), sequence_len=seq_len)


def test_sliding_infer_warmup_is_nm():
    model = recurrent_model()
    frames = np.random.default_rng(21).standard_normal((5, 24))
    out = sliding_infer(model, frames)
    assert np.all(out.classes == NM)
    assert np.all(out.confidence == 1.0)


def test_sliding_infer_stationary_stream_constant():
    model = recurrent_model(seq_len=6)
    frame = np.random.default_rng(22).standard_normal(24)
    frames = np.tile(frame, (20, 1))
    out = sliding_infer(model, frames)
    assert len(set(out.classes[5:].tolist())) == 1
    assert np.allclose(out.confidence[5:], out.confidence[5], atol=1e-12)


def test_sliding_infer_matches_batch_forward():
    model = recurrent_model(seq_len=8)
    frames = np.random.default_rng(23).standard_normal((30, 24))
    out = sliding_infer(model, frames)
    windows = np.lib.stride_tricks.sliding_window_view(frames, 8, axis=0).transpose(0, 2, 1)
    _, logits = forward_windows(model.net, np.ascontiguousarray(windows))
    post = stable_posterior(logits)
    assert np.array_equal(out.classes[7:], post.argmax(axis=1))
    assert np.allclose(out.posterior[7:], post, atol=1e-12)


# --- serialization ---------------------------------------------------------

def test_lda_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(24)
    x = rng.standard_normal((300, 6))
    y = rng.integers(0, 3, 300)
    model = lda_fit(x, y, classes=[0, 1, 2], wamp_threshold=0.0123)
    path = tmp_path / "lda.model"
    save_model(model, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.class_means, model.class_means)
    assert np.array_equal(loaded.covariance, model.covariance)
    assert np.array_equal(loaded.inv_covariance, model.inv_covariance)
    assert np.array_equal(loaded.priors, model.priors)
    assert np.array_equal(loaded.classes, model.classes)
    assert loaded.wamp_threshold == model.wamp_threshold
    assert np.array_equal(loaded.standardizer.mean, model.standardizer.mean)
    assert np.array_equal(loaded.standardizer.std, model.standardizer.std)


def test_recurrent_roundtrip_exact(tmp_path):
    model = recurrent_model(seed=25, seq_len=12)
    model.wamp_threshold = 0.077
    model.stage = "finetuned"
    path = tmp_path / "net.model"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.sequence_len == 12
    assert loaded.stage == "finetuned"
    assert loaded.wamp_threshold == 0.077
    for (ka, pa), (kb, pb) in zip(
        model.net.state_dict().items(), loaded.net.state_dict().items()
    ):
        assert ka == kb
        assert torch.equal(pa, pb)
    frames = np.random.default_rng(26).standard_normal((20, 24))
    a = sliding_infer(model, frames)
    b = sliding_infer(loaded, frames)
    assert np.array_equal(a.classes, b.classes)
    assert np.array_equal(a.posterior, b.posterior)


def test_model_file_identical_across_saves(tmp_path):
    model = recurrent_model(seed=27)
    p1, p2 = tmp_path / "a.model", tmp_path / "b.model"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_build_sequences_windows_and_labels():
    trials = [np.arange(40).reshape(10, 4).astype(float)]
    labels = [np.arange(10)]
    x, y = build_sequences(trials, labels, sequence_len=4, stride=2)
    assert x.shape == (4, 4, 4)
    assert list(y) == [3, 5, 7, 9]  # window end labels
    assert np.array_equal(x[0], trials[0][0:4])
    assert np.array_equal(x[1], trials[0][2:6])


def test_build_sequences_skips_short_trials():
    trials = [np.zeros((3, 4)), np.ones((6, 4))]
    labels = [np.zeros(3), np.ones(6)]
    x, y = build_sequences(trials, labels, sequence_len=5, stride=1)
    assert len(x) == 2  # only the second trial is long enough
    assert np.all(y == 1)
