import numpy as np
import pytest

from cluvad.errors import NumericError, ParameterError, SchemaError
from cluvad.lstmvae import (
    LstmVaeModel,
    TrainConfig,
    forward,
    init_model,
    kl_gauss,
    loss,
    loss_and_grads,
    score_window,
    score_windows,
    train,
)
from cluvad.preprocess import WindowedTensor


def finite_difference_check(model, window, eps, step=1e-5):
    """Max relative error between analytic and central-difference grads."""
    (_, _, _), grads = loss_and_grads(model, window[None], eps[None])
    worst = 0.0
    for name, arr in model.parameters():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss(model, window, eps)[0]
            arr[idx] = orig - step
            down = loss(model, window, eps)[0]
            arr[idx] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = grads[name][idx]
            rel = abs(numeric - analytic) / max(1e-8, abs(numeric) + abs(analytic))
            worst = max(worst, rel)
    return worst


def test_kl_gauss_closed_forms():
    assert kl_gauss(np.zeros(3), np.zeros(3)) == 0.0
    assert kl_gauss(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5)
    assert kl_gauss(np.array([0.0]), np.array([np.log(4.0)])) == pytest.approx(
        0.5 * (4.0 - 1.0 - np.log(4.0))
    )
    assert kl_gauss(np.array([0.0]), np.array([np.log(4.0)])) == pytest.approx(0.80685, abs=1e-5)


def test_kl_gauss_nonnegative_and_zero_only_at_prior():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mu = rng.standard_normal(4)
        logvar = rng.uniform(-3, 3, 4)
        value = kl_gauss(mu, logvar)
        assert value >= 0.0
        if value == 0.0:
            assert np.all(mu == 0.0) and np.all(logvar == 0.0)


def test_kl_gauss_errors():
    with pytest.raises(NumericError):
        kl_gauss(np.array([np.nan]), np.array([0.0]))
    with pytest.raises(SchemaError):
        kl_gauss(np.zeros(2), np.zeros(3))


def test_forward_zero_output_head_reconstructs_zero():
    model = init_model(["a", "b"], hidden=6, latent=3, seed=0)
    model.w_out[:] = 0.0
    model.b_out[:] = 0.0
    rng = np.random.default_rng(1)
    out = forward(model, rng.standard_normal((9, 2)))
    np.testing.assert_array_equal(out.x_hat, np.zeros((9, 2)))


def test_forward_deterministic_bit_identical():
    model = init_model(["a", "b", "c"], hidden=8, latent=4, seed=2)
    rng = np.random.default_rng(3)
    window = rng.standard_normal((12, 3))
    eps = rng.standard_normal(4)
    out1 = forward(model, window, eps)
    out2 = forward(model, window, eps)
    assert np.array_equal(out1.x_hat, out2.x_hat)
    assert np.array_equal(out1.mu, out2.mu)
    det1 = forward(model, window)
    det2 = forward(model, window)
    assert np.array_equal(det1.x_hat, det2.x_hat)


def test_forward_shapes_and_sq_err():
    model = init_model(["a", "b"], hidden=5, latent=3, seed=4)
    window = np.random.default_rng(5).standard_normal((7, 2))
    out = forward(model, window)
    assert out.x_hat.shape == (7, 2)
    assert out.mu.shape == (3,)
    assert out.logvar.shape == (3,)
    np.testing.assert_allclose(out.sq_err, (out.x_hat - window) ** 2)


def test_forward_handles_any_window_length():
    model = init_model(["a"], hidden=4, latent=2, seed=6)
    for t in (1, 2, 30):
        out = forward(model, np.random.default_rng(t).standard_normal((t, 1)))
        assert out.x_hat.shape == (t, 1)


def test_forward_shape_errors():
    model = init_model(["a", "b"], hidden=4, latent=2, seed=7)
    with pytest.raises(SchemaError):
        forward(model, np.zeros((5, 3)))
    with pytest.raises(SchemaError):
        forward(model, np.zeros((5, 2)), noise=np.zeros(3))


def test_loss_zero_at_perfect_reconstruction():
    # all-zero parameters map a zero window to x_hat = 0 with mu = logvar = 0
    model = init_model(["a", "b"], hidden=4, latent=2, seed=8)
    for _, arr in model.parameters():
        arr[:] = 0.0
    total, recon, kl = loss(model, np.zeros((6, 2)))
    assert total == 0.0 and recon == 0.0 and kl == 0.0


def test_loss_beta_zero_is_pure_reconstruction():
    model = init_model(["a", "b"], hidden=4, latent=2, seed=9, beta=0.0)
    window = np.random.default_rng(10).standard_normal((6, 2))
    total, recon, kl = loss(model, window)
    assert total == recon
    assert kl > 0.0


def test_gradient_check_tiny_model():
    model = init_model(["a", "b"], hidden=4, latent=2, seed=1)
    rng = np.random.default_rng(42)
    window = rng.standard_normal((5, 2))
    eps = rng.standard_normal(2)
    assert finite_difference_check(model, window, eps) < 1e-4


def test_gradient_check_deterministic_mode():
    model = init_model(["a"], hidden=3, latent=2, seed=11)
    rng = np.random.default_rng(12)
    window = rng.standard_normal((4, 1))
    (_, _, _), grads = loss_and_grads(model, window[None], None)
    step = 1e-5
    worst = 0.0
    for name, arr in model.parameters():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss(model, window)[0]
            arr[idx] = orig - step
            down = loss(model, window)[0]
            arr[idx] = orig
            numeric = (up - down) / (2.0 * step)
            rel = abs(numeric - grads[name][idx]) / max(1e-8, abs(numeric) + abs(grads[name][idx]))
            worst = max(worst, rel)
    assert worst < 1e-4


def constant_tensor(value=0.7, d=40, t=6, f=2):
    data = np.full((d, t, f), value)
    return WindowedTensor(data, t, 1, 0, ("a", "b"))


def test_train_epochs_zero_returns_unchanged():
    model = init_model(["a", "b"], hidden=4, latent=2, seed=13)
    trained, log = train(model, constant_tensor(), TrainConfig(epochs=0))
    for (_, arr1), (_, arr2) in zip(model.parameters(), trained.parameters()):
        assert np.array_equal(arr1, arr2)
    assert log.epochs == []


def test_train_deterministic_given_seed():
    tensor = constant_tensor()
    model = init_model(["a", "b"], hidden=4, latent=2, seed=14)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=5)
    m1, log1 = train(model, tensor, cfg)
    m2, log2 = train(model, tensor, cfg)
    for (_, a), (_, b) in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a, b)
    assert log1.epochs == log2.epochs


def test_train_does_not_mutate_input():
    tensor = constant_tensor()
    model = init_model(["a", "b"], hidden=4, latent=2, seed=15)
    before = [arr.copy() for _, arr in model.parameters()]
    train(model, tensor, TrainConfig(epochs=2, batch_size=8, seed=1))
    for (_, arr), prev in zip(model.parameters(), before):
        assert np.array_equal(arr, prev)


def test_train_overfits_constant_dataset():
    tensor = constant_tensor(value=0.5, d=60, t=6)
    model = init_model(["a", "b"], hidden=8, latent=2, seed=16)
    trained, _ = train(
        model, tensor, TrainConfig(epochs=120, batch_size=16, learning_rate=5e-3,
                                   seed=2, val_fraction=0.0, patience=120)
    )
    out = forward(trained, tensor.data[0])
    assert np.abs(out.x_hat - 0.5).max() < 0.05


def sinusoid_tensor(seed=0, n=400, t=8, amp=5.0):
    rng = np.random.default_rng(seed)
    x = np.arange(n)
    sig = amp * (np.sin(2 * np.pi * x / 23.0) + 0.5 * np.sin(2 * np.pi * x / 7.0))
    values = np.column_stack([sig, -sig]) + rng.normal(0, 0.05, (n, 2))
    data = np.stack([values[i : i + t] for i in range(n - t + 1)])
    return WindowedTensor(data, t, 1, 0, ("a", "b"))


def test_train_loss_halves_on_learnable_signal():
    tensor = sinusoid_tensor()
    model = init_model(["a", "b"], hidden=16, latent=4, seed=17)
    _, log = train(
        model, tensor, TrainConfig(epochs=50, batch_size=16, learning_rate=5e-3,
                                   seed=3, val_fraction=0.0, patience=50, beta_warmup=10)
    )
    losses = [row["recon"] + row["kl"] for row in log.epochs]
    assert losses[-1] <= 0.5 * losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_keeps_last_good():
    tensor = constant_tensor()
    model = init_model(["a", "b"], hidden=4, latent=2, seed=18)
    # a step this size overflows the squared reconstruction error
    trained, log = train(
        model, tensor, TrainConfig(epochs=5, batch_size=8, learning_rate=1e200, seed=4)
    )
    assert log.diverged
    for _, arr in trained.parameters():
        assert np.all(np.isfinite(arr))


def test_train_name_mismatch():
    tensor = constant_tensor()
    model = init_model(["x", "y"], hidden=4, latent=2, seed=19)
    with pytest.raises(SchemaError):
        train(model, tensor, TrainConfig(epochs=1))


def test_score_window_shift_increases_error():
    tensor = sinusoid_tensor(seed=5)
    model = init_model(["a", "b"], hidden=16, latent=3, seed=20)
    trained, _ = train(model, tensor, TrainConfig(epochs=30, batch_size=32, seed=6,
                                                  val_fraction=0.0, patience=30))
    window = tensor.data[10]
    base_err, base_kl = score_window(trained, window)
    shifted = window.copy()
    shifted[-1, 0] += 10.0
    shift_err, _ = score_window(trained, shifted)
    assert shift_err > base_err


def test_score_window_kl_matches_definition():
    model = init_model(["a", "b"], hidden=5, latent=3, seed=21)
    window = np.random.default_rng(22).standard_normal((6, 2))
    _, kl = score_window(model, window)
    out = forward(model, window)
    assert kl == kl_gauss(out.mu, out.logvar)


def test_score_windows_matches_score_window():
    model = init_model(["a", "b"], hidden=5, latent=3, seed=23)
    data = np.random.default_rng(24).standard_normal((7, 6, 2))
    recon, kl = score_windows(model, data)
    for d in range(7):
        r1, k1 = score_window(model, data[d])
        assert recon[d] == pytest.approx(r1, abs=1e-12)
        assert kl[d] == pytest.approx(k1, abs=1e-12)


def test_checkpoint_round_trip():
    model = init_model(["a", "b", "c"], hidden=6, latent=3, seed=25)
    back = LstmVaeModel.from_json(model.to_json())
    assert back.names == model.names
    for (_, a), (_, b) in zip(model.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    window = np.random.default_rng(26).standard_normal((5, 3))
    assert score_window(model, window) == score_window(back, window)


def test_checkpoint_bad_version():
    model = init_model(["a"], hidden=3, latent=2, seed=27)
    text = model.to_json().replace('"version": 1', '"version": 99')
    with pytest.raises(SchemaError):
        LstmVaeModel.from_json(text)


def test_train_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(epochs=-1)
    with pytest.raises(ParameterError):
        TrainConfig(val_fraction=1.0)
    with pytest.raises(ParameterError):
        TrainConfig(learning_rate=0.0)


def test_logvar_clamped():
    model = init_model(["a"], hidden=3, latent=2, seed=28)
    model.w_logvar[:] = 0.0
    model.b_logvar[:] = 50.0  # way past the clamp
    out = forward(model, np.zeros((4, 1)))
    assert np.all(out.logvar <= 10.0)
