import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdiverse import autodiff as ad
from advdiverse.attack import (
    AttackConfig,
    LossSpec,
    attack_step_noise_trunc,
    attack_step_sample_clip,
    directional_deltas,
    directional_loss,
    init_perturbation,
    random_perturbation,
    reference_direction,
    run_attack,
    sample_epsilon,
    untargeted_loss,
)
from advdiverse.autodiff import Tensor
from advdiverse.errors import ConfigError, DegenerateDirectionError, DimensionError, NumericError
from advdiverse.models import (
    ConditionSet,
    ConstantGenerator,
    ConvGenerator,
    DiffusionFillInpainter,
    GeneratorModel,
    ConditionSpec,
    ToyEmbedder,
    generate,
)


def inpaint_setup(size=32):
    m = DiffusionFillInpainter((size, size))
    return m, m.default_conditions()


# -- init noise -----------------------------------------------------------------


def test_init_zero_delta_is_identity():
    x = np.random.default_rng(0).random((5, 5))
    np.testing.assert_array_equal(init_perturbation(x, 0.0, np.random.default_rng(1)), x)


def test_init_same_seed_same_result():
    x = np.full((4, 4), 0.5)
    a = init_perturbation(x, 1e-3, np.random.default_rng(3))
    b = init_perturbation(x, 1e-3, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_init_noise_std():
    x = np.full((32, 32), 0.5)
    rng = np.random.default_rng(4)
    diffs = np.concatenate([(init_perturbation(x, 1e-4, rng) - x).ravel() for _ in range(10)])
    assert diffs.size >= 10_000
    assert 0.8e-4 <= diffs.std() <= 1.2e-4


def test_init_negative_delta():
    with pytest.raises(ConfigError):
        init_perturbation(np.zeros(3), -1.0, np.random.default_rng(0))


def test_init_clamps_to_domain():
    out = init_perturbation(np.zeros((10, 10)), 0.5, np.random.default_rng(5))
    assert out.min() >= 0.0


# -- losses ---------------------------------------------------------------------


def test_l1_identical_is_zero():
    y = Tensor(np.random.default_rng(0).random(6))
    assert untargeted_loss("l1", y, y.data).item() == 0.0


def test_l1_example():
    assert untargeted_loss("l1", Tensor([0.2, 0.8]), [0.1, 0.6]).item() == pytest.approx(0.3, abs=1e-15)


def test_var_constant_is_zero():
    assert untargeted_loss("var", Tensor(np.full((3, 3), 0.4)), None).item() == pytest.approx(0.0, abs=1e-30)


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        untargeted_loss("l1", Tensor(np.zeros(3)), np.zeros(4))


def test_l1_gradient_sign_positive_residual():
    y = Tensor([0.5, 0.7, 0.9])
    g = ad.grad(untargeted_loss("l1", y, [0.1, 0.1, 0.1]), y)
    np.testing.assert_array_equal(ad.sign(g).data, [1.0, 1.0, 1.0])


def test_directional_aligned_orthogonal_zero():
    assert directional_loss(Tensor([1.0, 2.0]), [2.0, 4.0]).item() == pytest.approx(1.0, abs=1e-15)
    assert directional_loss(Tensor([1.0, 0.0]), [0.0, 3.0]).item() == pytest.approx(0.0, abs=1e-15)
    d_i = Tensor(np.zeros(4))
    loss = directional_loss(d_i, np.ones(4))
    assert loss.item() == 0.0
    np.testing.assert_array_equal(ad.grad(loss, d_i).data, np.zeros(4))


def test_directional_zero_reference():
    with pytest.raises(DegenerateDirectionError):
        directional_loss(Tensor([1.0, 0.0]), np.zeros(2))


def test_directional_deltas_at_default_is_zero():
    e = ToyEmbedder()
    y = np.random.default_rng(1).random((8, 8))
    spec = LossSpec("targeted_directional", embedding_pair=(np.eye(16)[0], np.eye(16)[1]))
    d_i, _ = directional_deltas(Tensor(y), y, spec, e)
    np.testing.assert_array_equal(d_i.data, np.zeros(16))


def test_text_branch_identical_descriptions():
    e = ToyEmbedder()
    v = np.eye(16)[2]
    spec = LossSpec("targeted_directional", embedding_pair=(v, v))
    with pytest.raises(DegenerateDirectionError):
        reference_direction(spec, e, np.zeros((8, 8)))


def test_image_branch_reference_direction():
    e = ToyEmbedder()
    rng = np.random.default_rng(2)
    y, ref = rng.random((8, 8)), rng.random((8, 8))
    spec = LossSpec("targeted_directional", reference_image=ref)
    expected = e.embed(Tensor(ref)).data - e.embed(Tensor(y)).data
    np.testing.assert_array_equal(reference_direction(spec, e, y), expected)


def test_loss_spec_validation():
    with pytest.raises(ConfigError):
        LossSpec("targeted_directional")
    with pytest.raises(ConfigError):
        LossSpec("hinge")


# -- update rules ---------------------------------------------------------------


def test_noise_trunc_example():
    out = attack_step_noise_trunc([0.5], [0.55], [1.0], 0.05, -0.09, 0.09)
    assert out[0] == pytest.approx(0.59, abs=1e-15)


def test_noise_trunc_zero_gradient_is_stationary():
    x = np.full((3, 3), 0.5)
    x_i = x + 0.03
    np.testing.assert_array_equal(attack_step_noise_trunc(x, x_i, np.zeros((3, 3)), 0.01, -0.09, 0.09), x_i)


def test_noise_trunc_respects_mask():
    x = np.full((2, 2), 0.5)
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = attack_step_noise_trunc(x, x, np.ones((2, 2)), 0.01, -0.09, 0.09, mask=mask)
    np.testing.assert_allclose(out, [[0.51, 0.5], [0.5, 0.51]], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 0.2), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_noise_trunc_budget_over_random_sequences(seed, eps, cmax, neg_cmin):
    rng = np.random.default_rng(seed)
    x = rng.random(20)
    x_i = x.copy()
    for _ in range(15):
        x_i = attack_step_noise_trunc(x, x_i, rng.normal(size=20), eps, -neg_cmin, cmax)
        assert np.max(np.abs(x_i - x)) <= max(cmax, neg_cmin) + 1e-12
        assert x_i.min() >= 0.0 and x_i.max() <= 1.0


def test_sample_clip_examples():
    assert attack_step_sample_clip([0.99], [1.0], 0.05, 0.0, 1.0)[0] == 1.0
    assert attack_step_sample_clip([0.5], [-3.0], 0.01)[0] == pytest.approx(0.49, abs=1e-15)


def test_step_rejects_nonpositive_eps():
    with pytest.raises(ConfigError):
        attack_step_noise_trunc([0.5], [0.5], [1.0], 0.0, -0.1, 0.1)
    with pytest.raises(ConfigError):
        attack_step_sample_clip([0.5], [1.0], -0.1)


# -- epsilon --------------------------------------------------------------------


def test_sample_epsilon_degenerate():
    assert sample_epsilon([0.01, 0.01], np.random.default_rng(0)) == 0.01


def test_sample_epsilon_mean():
    rng = np.random.default_rng(1)
    draws = [sample_epsilon([0.01, 0.05], rng) for _ in range(10_000)]
    assert abs(np.mean(draws) - 0.03) <= 0.001
    assert min(draws) >= 0.01 and max(draws) <= 0.05


def test_sample_epsilon_seeded():
    assert sample_epsilon([0.01, 0.05], np.random.default_rng(9)) == sample_epsilon([0.01, 0.05], np.random.default_rng(9))


@pytest.mark.parametrize("interval", [[0.05, 0.01], [0.0, 0.1], [-0.1, 0.1]])
def test_sample_epsilon_invalid(interval):
    with pytest.raises(ConfigError):
        sample_epsilon(interval, np.random.default_rng(0))


def test_decay_closed_form_at_step_10():
    m, conds = inpaint_setup(16)
    _, trace = run_attack(m, conds, AttackConfig(steps=10, epsilon0=0.05))
    assert trace.records[9].eps["image"] == pytest.approx(0.05 * 0.95**9, abs=1e-15)
    assert trace.records[9].eps["image"] == pytest.approx(0.031512, abs=1e-6)


def test_interval_epsilon_drawn_once():
    m, conds = inpaint_setup(16)
    _, trace = run_attack(m, conds, AttackConfig(steps=5, epsilon0=(0.01, 0.05), seed=3))
    e0 = trace.records[0].eps["image"]
    assert 0.01 <= e0 <= 0.05
    for r in trace.records:
        assert r.eps["image"] == pytest.approx(e0 * 0.95 ** (r.step - 1), rel=1e-14)


# -- the loop -------------------------------------------------------------------


def test_no_op_attack_on_constant_model():
    m = ConstantGenerator((8, 8))
    conds = m.default_conditions()
    y, trace = run_attack(m, conds, AttackConfig(steps=1, delta=0.0))
    np.testing.assert_array_equal(y, generate(m, conds).data)
    np.testing.assert_array_equal(trace.final_conditions["image"], conds["image"].value)


def test_attack_grows_l1_deviation():
    m, conds = inpaint_setup()
    _, trace = run_attack(m, conds, AttackConfig(steps=10, epsilon0=0.01))
    deltas = trace.column("l1_output_delta")
    assert deltas[-1] > deltas[0]


def test_trace_shapes_and_csv():
    m, conds = inpaint_setup(16)
    _, trace = run_attack(m, conds, AttackConfig(steps=4))
    assert len(trace) == len(trace.outputs) == len(trace.step_sizes) == 4
    lines = trace.to_csv().splitlines()
    assert lines[0] == "step,loss,eps,linf_perturbation,l1_output_delta"
    assert len(lines) == 5
    assert [int(line.split(",")[0]) for line in lines[1:]] == [1, 2, 3, 4]


def test_attack_determinism():
    m, conds = inpaint_setup(16)
    cfg = AttackConfig(steps=5, seed=11, epsilon0=(0.01, 0.05))
    y1, t1 = run_attack(m, conds, cfg)
    y2, t2 = run_attack(m, conds, cfg)
    assert y1.tobytes() == y2.tobytes()
    assert t1.to_csv() == t2.to_csv()


def test_different_seeds_differ():
    m, conds = inpaint_setup(16)
    y1, _ = run_attack(m, conds, AttackConfig(seed=0))
    y2, _ = run_attack(m, conds, AttackConfig(seed=1))
    assert np.any(y1 != y2)


def test_fixed_conditions_untouched():
    m, conds = inpaint_setup(16)
    _, trace = run_attack(m, conds, AttackConfig(steps=3))
    assert list(trace.final_conditions) == ["image"]


def test_step_size_invariant_sample_clip():
    # away from the domain bounds every coordinate moves by exactly +-eps_i
    m = ConvGenerator((8, 8))
    conds = ConditionSet.from_arrays({"image": np.full((8, 8), 0.5)})
    cfg = AttackConfig(steps=6, truncation="sample_clip", epsilon0=0.01, delta=1e-4)
    _, trace = run_attack(m, conds, cfg)
    base = np.full((8, 8), 0.5)
    # recover each iterate by re-running with one more step
    prev = None
    for steps in range(1, 7):
        _, t = run_attack(m, conds, dataclasses.replace(cfg, steps=steps))
        cur = t.final_conditions["image"]
        if prev is not None:
            eps_i = 0.01 * 0.95 ** (steps - 1)
            moved = np.abs(cur - prev)
            assert np.all((np.abs(moved - eps_i) < 1e-15) | (moved == 0.0))
        prev = cur
    np.testing.assert_array_equal(prev, trace.final_conditions["image"])
    assert np.max(np.abs(prev - base)) > 0


def test_masked_perturbation_stays_in_hole():
    m, conds = inpaint_setup(16)
    mask = conds["mask"].value
    conds["image"] = dataclasses.replace(conds["image"], perturb_mask=mask)
    _, trace = run_attack(m, conds, AttackConfig(steps=5))
    diff = trace.final_conditions["image"] - conds["image"].value
    assert np.all(diff[mask == 0] == 0.0)
    assert np.any(diff[mask == 1] != 0.0)


def test_targeted_requires_embedder():
    m, conds = inpaint_setup(16)
    spec = LossSpec("targeted_directional", reference_image=np.zeros((16, 16)))
    with pytest.raises(ConfigError):
        run_attack(m, conds, AttackConfig(loss=spec))


def test_targeted_image_reference_increases_cosine():
    m = ConvGenerator((16, 16))
    conds = m.default_conditions()
    ref = np.random.default_rng(5).random((16, 16))
    cfg = AttackConfig(steps=10, epsilon0=0.02, loss=LossSpec("targeted_directional", reference_image=ref))
    _, trace = run_attack(m, conds, cfg, ToyEmbedder())
    assert trace.final_loss > trace.records[0].loss


class _Exploding(GeneratorModel):
    condition_schema = (ConditionSpec("image", (4, 4), "image"),)

    def forward(self, inputs):
        return ad.div(inputs["image"], 0.0)

    def default_conditions(self):
        return ConditionSet.from_arrays({"image": np.full((4, 4), 0.5)})


def test_non_finite_loss_raises_with_step():
    m = _Exploding()
    with np.errstate(all="ignore"), pytest.raises(NumericError) as info:
        run_attack(m, m.default_conditions(), AttackConfig(steps=3))
    assert info.value.step == 1


def test_random_perturbation_respects_budget():
    m, conds = inpaint_setup(16)
    out = random_perturbation(conds, 0.09, np.random.default_rng(0))
    assert np.max(np.abs(out["image"].value - conds["image"].value)) <= 0.09
    np.testing.assert_array_equal(out["mask"].value, conds["mask"].value)


@pytest.mark.parametrize("kwargs", [dict(steps=0), dict(delta=-1.0), dict(c_min=0.1), dict(decay=0.0), dict(epsilon0=-0.01), dict(epsilon0=(0.0, 0.1))])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AttackConfig(**kwargs)


def test_zero_epsilon_disables_update():
    m, conds = inpaint_setup(16)
    y, trace = run_attack(m, conds, AttackConfig(steps=3, epsilon0=0.0, delta=0.0))
    np.testing.assert_array_equal(y, generate(m, conds).data)
    assert all(r.eps["image"] == 0.0 for r in trace.records)
