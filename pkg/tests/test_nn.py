import numpy as np
import pytest

from stable_velocity import varepa
from stable_velocity.errors import ConfigError, DataError
from stable_velocity.nn import AdamW, Architecture, VelocityModel, loss_and_grad
from stable_velocity.rng import substream


def _random_case(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(3, 9, size=int(rng.integers(1, 4))))
    classes = int(rng.choice([0, 3]))
    arch = Architecture(dim=dim, hidden=hidden, time_features=int(rng.integers(0, 4)), num_classes=classes,
                        embed_dim=3, rep_layer=len(hidden) - 1)
    model = VelocityModel(arch, rng=rng)
    model.theta += 0.3 * rng.standard_normal(model.theta.shape)  # nonzero output layer
    B = 5
    xt, target = rng.normal(size=(2, B, dim))
    t = rng.uniform(0.01, 0.99, B)
    labels = rng.integers(0, classes + 1, B) if classes else None
    aux = None
    if seed % 2 == 0:
        aux = {"x0": rng.normal(size=(B, dim)), "teacher": varepa.make_teacher(dim, hidden[-1], rng),
               "w": rng.random(B), "lambda_ra": 0.5}
    main_weight = rng.random(B) if seed % 3 == 0 else None
    return model, (xt, target, t, labels, main_weight, aux)


def _loss(model, args):
    xt, target, t, labels, main_weight, aux = args
    return loss_and_grad(model, xt, target, t, labels=labels, main_weight=main_weight, aux=aux)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_central_differences(seed):
    model, args = _random_case(seed)
    _, grad, _ = _loss(model, args)
    h = 1e-5
    num = np.empty_like(grad)
    for i in range(grad.size):
        old = model.theta[i]
        model.theta[i] = old + h
        up = _loss(model, args)[0]
        model.theta[i] = old - h
        down = _loss(model, args)[0]
        model.theta[i] = old
        num[i] = (up - down) / (2 * h)
    rel = np.abs(grad - num) / np.maximum(np.abs(grad) + np.abs(num), 1e-6)
    assert rel.max() < 1e-4


def test_zero_initialized_output_layer():
    model = VelocityModel(Architecture(dim=3, hidden=(16, 16)), rng=substream(0))
    x = np.random.default_rng(1).normal(size=(10, 3))
    np.testing.assert_array_equal(model.velocity(x, 0.3), 0.0)


def test_forward_is_deterministic():
    model = VelocityModel(Architecture(dim=2, hidden=(8,), num_classes=2, rep_layer=0), rng=substream(1))
    model.theta += 0.1
    x = np.ones((4, 2))
    a, ra = model.forward(x, 0.4, [0, 1, 2, 0])
    b, rb = model.forward(x, 0.4, [0, 1, 2, 0])
    assert np.array_equal(a, b) and np.array_equal(ra, rb)
    assert a.shape == (4, 2) and ra.shape == (4, 8)


def test_parameter_count_formula():
    arch = Architecture(dim=10, hidden=(256, 256, 256), time_features=16, num_classes=4, embed_dim=16)
    inp = 10 + 32 + 16
    want = 5 * 16 + (inp * 256 + 256) + 2 * (256 * 256 + 256) + (256 * 10 + 10)
    assert arch.param_count() == want
    assert VelocityModel(arch).theta.size == want


def test_main_loss_examples():
    model = VelocityModel(Architecture(dim=1, hidden=(4,), rep_layer=0))
    model.biases[-1][:] = 2.0
    loss, _, parts = loss_and_grad(model, np.zeros((1, 1)), np.zeros((1, 1)), 0.5)
    assert loss == 4.0 and parts["main"] == 4.0
    loss, grad, _ = loss_and_grad(model, np.zeros((3, 1)), np.full((3, 1), 2.0), 0.5)
    assert loss == 0.0 and not grad.any()


def test_label_errors():
    uncond = VelocityModel(Architecture(dim=1, hidden=(4,), rep_layer=0))
    with pytest.raises(ConfigError):
        uncond.forward(np.zeros((1, 1)), 0.5, [0])
    cond = VelocityModel(Architecture(dim=1, hidden=(4,), num_classes=2, rep_layer=0))
    with pytest.raises(ConfigError):
        cond.forward(np.zeros((1, 1)), 0.5, [3])


def test_nan_target_reports_batch_index():
    model = VelocityModel(Architecture(dim=2, hidden=(4,), rep_layer=0))
    target = np.zeros((5, 2))
    target[3, 1] = np.nan
    with pytest.raises(DataError, match="index 3"):
        loss_and_grad(model, np.zeros((5, 2)), target, 0.5)


def test_adamw_single_scalar_trace():
    opt = AdamW(lr=0.1, weight_decay=0.01)
    p = np.array([1.0])
    opt.step(p, np.array([0.5]))
    # m_hat = g, v_hat = g^2 after bias correction
    want = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0)
    assert p[0] == pytest.approx(want, abs=1e-15)
    opt.step(p, np.array([-0.25]))
    m = 0.9 * 0.1 * 0.5 + 0.1 * -0.25
    v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999 ** 2)
    want = want - 0.1 * (m_hat / (np.sqrt(v_hat) + 1e-8) + 0.01 * want)
    assert p[0] == pytest.approx(want, abs=1e-14)


def test_adamw_zero_grads_leave_params():
    p = np.arange(5.0)
    AdamW(lr=1e-2).step(p, np.zeros(5))
    np.testing.assert_array_equal(p, np.arange(5.0))


def test_architecture_round_trip():
    arch = Architecture(dim=3, hidden=(5, 6), time_features=4, num_classes=2, embed_dim=3, rep_layer=0)
    assert Architecture.from_dict(arch.to_dict()) == arch
    with pytest.raises(ConfigError):
        Architecture(dim=3, hidden=(5,), rep_layer=1)
