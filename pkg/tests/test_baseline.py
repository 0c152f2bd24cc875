import numpy as np
import pytest

from advdiverse.attack import AttackConfig, LossSpec, run_attack
from advdiverse.baseline import AdamConfig, adam_step, path_divergence_experiment, run_optimizer_attack
from advdiverse.errors import ConfigError
from advdiverse.models import DiffusionFillInpainter, generate


def setup(size=16):
    m = DiffusionFillInpainter((size, size))
    return m, m.default_conditions()


def test_adam_zero_gradient_is_stationary():
    x = np.full((3, 3), 0.5)
    out, m, v = adam_step(x, x, np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), 1, AdamConfig())
    np.testing.assert_array_equal(out, x)
    assert not m.any() and not v.any()


def test_adam_first_step_closed_form():
    cfg = AdamConfig(lr=0.01, c_min=-1.0, c_max=1.0)
    x = np.full(4, 0.5)
    g = np.array([2.0, -0.5, 1e-9, -3.0])
    out, _, _ = adam_step(x, x, np.zeros(4), np.zeros(4), g, 1, cfg)
    # bias correction makes m_hat = g and sqrt(v_hat) = |g|
    expected = x + cfg.lr * g / (np.abs(g) + cfg.adam_eps)
    np.testing.assert_allclose(out, expected, atol=1e-15)
    assert np.all(np.abs(out[[0, 1, 3]] - x[[0, 1, 3]]) == pytest.approx(0.01, rel=1e-6))


def test_adam_hundred_random_steps_finite():
    rng = np.random.default_rng(0)
    cfg = AdamConfig(lr=0.05)
    x = rng.random(50)
    x_i, m, v = x.copy(), np.zeros(50), np.zeros(50)
    for t in range(1, 101):
        x_i, m, v = adam_step(x, x_i, m, v, rng.normal(scale=10.0 ** rng.uniform(-6, 6), size=50), t, cfg)
        assert np.all(np.isfinite(x_i)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))
        assert np.max(np.abs(x_i - x)) <= cfg.budget + 1e-12


def test_adam_step_index_starts_at_one():
    with pytest.raises(ConfigError):
        adam_step(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.ones(2), 0, AdamConfig())


def test_adam_lr_zero_is_frozen():
    m, conds = setup()
    y, trace = run_optimizer_attack(m, conds, AdamConfig(lr=0.0, delta=0.0, steps=3))
    np.testing.assert_array_equal(y, generate(m, conds).data)
    assert all(s == 0.0 for s in trace.step_sizes)


def test_adam_determinism():
    m, conds = setup()
    cfg = AdamConfig(seed=5, steps=4)
    y1, t1 = run_optimizer_attack(m, conds, cfg)
    y2, t2 = run_optimizer_attack(m, conds, cfg)
    assert y1.tobytes() == y2.tobytes() and t1.to_csv() == t2.to_csv()


def test_adam_loss_mostly_non_decreasing_small_lr():
    m, conds = setup(32)
    _, trace = run_optimizer_attack(m, conds, AdamConfig(lr=1e-3, steps=10))
    losses = trace.column("loss") + [trace.final_loss]
    ups = sum(b >= a for a, b in zip(losses, losses[1:]))
    assert ups >= 0.9 * (len(losses) - 1)


def test_shared_trace_schema():
    m, conds = setup()
    _, ta = run_optimizer_attack(m, conds, AdamConfig(steps=3))
    _, ts = run_attack(m, conds, AttackConfig(steps=3))
    assert ta.to_csv().splitlines()[0] == ts.to_csv().splitlines()[0]
    assert len(ta) == len(ts)


def test_divergence_identical_seeds_is_zero():
    m, conds = setup()
    rep = path_divergence_experiment(m, conds, "sign", trials=2, seeds=[3, 3])
    assert rep.distances == [0.0]


def test_divergence_pair_count_and_mean():
    m, conds = setup()
    rep = path_divergence_experiment(m, conds, "adam", trials=4, cfg=AdamConfig(steps=3))
    assert len(rep.distances) == 6
    assert rep.mean_distance == pytest.approx(np.mean(rep.distances), rel=1e-15)


def test_divergence_sign_positive():
    m, conds = setup(32)
    rep = path_divergence_experiment(m, conds, "sign", trials=5, cfg=AttackConfig(loss=LossSpec("untargeted_var")))
    assert rep.mean_distance > 0


def test_divergence_consecutive_metric():
    m, conds = setup()
    rep = path_divergence_experiment(m, conds, "sign", trials=2, cfg=AttackConfig(steps=3), metric="consecutive")
    assert len(rep.distances) == 6 and rep.metric == "consecutive"


@pytest.mark.parametrize(
    "kwargs",
    [dict(trials=1), dict(method="sgd"), dict(metric="max"), dict(cfg=AdamConfig()), dict(seeds=[1, 2, 3])],
)
def test_divergence_validation(kwargs):
    m, conds = setup(8)
    args = dict(method="sign", trials=2) | kwargs
    with pytest.raises(ConfigError):
        path_divergence_experiment(m, conds, **args)


@pytest.mark.parametrize("kwargs", [dict(lr=-1.0), dict(beta1=1.0), dict(beta2=-0.1), dict(adam_eps=0.0)])
def test_adam_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AdamConfig(**kwargs)
