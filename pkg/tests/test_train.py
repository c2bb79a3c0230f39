import numpy as np
import pytest

from conftest import TOY_NET, random_sample
from marscost.net import init_params
from marscost.train import (
    AdamState,
    AugmentConfig,
    TrainConfig,
    adam_step,
    augment,
    fit,
    rotate_sample,
    translate_sample,
)

NO_AUG = AugmentConfig(rotate=False, translate=False, noise_sigma=0.0)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _zero_grads(params):
    return {n: np.zeros_like(t) for n, t in params.named_tensors()}


def test_adam_zero_grads_leave_params_unchanged():
    params = init_params(TOY_NET, seed=0)
    state = AdamState.fresh(params)
    new_params, new_state = adam_step(params, _zero_grads(params), state, lr=1e-2)
    for (_, a), (_, b) in zip(params.named_tensors(), new_params.named_tensors()):
        assert np.array_equal(a, b)
    assert new_state.k == 1


def test_adam_first_step_is_signed_lr():
    # closed form: m_hat / (sqrt(v_hat) + eps) = sign(g) up to eps rounding
    params = init_params(TOY_NET, seed=0)
    state = AdamState.fresh(params)
    grads = _zero_grads(params)
    grads["head_b2"] = np.array([0.37])
    lr = 1e-3
    new_params, _ = adam_step(params, grads, state, lr)
    delta = new_params.head_b2[0] - params.head_b2[0]
    assert abs(delta + lr * np.sign(0.37)) <= lr * 1e-6


def test_adam_deterministic_with_cloned_state():
    params = init_params(TOY_NET, seed=1)
    rng = np.random.default_rng(2)
    grads = {n: rng.normal(0, 1e-3, t.shape) for n, t in params.named_tensors()}
    s1 = AdamState.fresh(params)
    p_a, s_a = adam_step(params, grads, s1.copy(), 1e-3)
    p_b, s_b = adam_step(params, grads, s1.copy(), 1e-3)
    for (_, a), (_, b) in zip(p_a.named_tensors(), p_b.named_tensors()):
        assert np.array_equal(a, b)
    assert s_a.k == s_b.k
    for n in s_a.m:
        assert np.array_equal(s_a.m[n], s_b.m[n])
        assert np.array_equal(s_a.v[n], s_b.v[n])


def test_adam_rejects_non_finite_grads():
    params = init_params(TOY_NET, seed=1)
    grads = _zero_grads(params)
    grads["conv2_w"][0, 0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="conv2_w"):
        adam_step(params, grads, AdamState.fresh(params), 1e-3)


def test_adam_step_does_not_mutate_inputs():
    params = init_params(TOY_NET, seed=3)
    before = params.copy()
    state = AdamState.fresh(params)
    grads = {n: np.full(t.shape, 0.1) for n, t in params.named_tensors()}
    adam_step(params, grads, state, 1e-2)
    for (_, a), (_, b) in zip(params.named_tensors(), before.named_tensors()):
        assert np.array_equal(a, b)
    assert state.k == 0


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def test_augment_identity_draw():
    sample = random_sample(20)
    out = augment(sample, seed=0, cfg=NO_AUG)
    assert np.array_equal(out.cloud.xyz, sample.cloud.xyz)
    assert np.array_equal(out.image.pixels, sample.image.pixels)
    assert np.array_equal(out.target.values, sample.target.values)
    assert np.array_equal(out.target.valid, sample.target.valid)


def test_rotation_composition():
    sample = random_sample(21)
    twice = rotate_sample(rotate_sample(sample, 1), 1)
    once = rotate_sample(sample, 2)
    assert np.allclose(twice.cloud.xyz, once.cloud.xyz, atol=1e-12)
    assert np.array_equal(twice.target.values, once.target.values)
    assert np.array_equal(twice.target.valid, once.target.valid)


def test_rotation_four_times_is_identity():
    sample = random_sample(22)
    out = sample
    for _ in range(4):
        out = rotate_sample(out, 1)
    assert np.allclose(out.cloud.xyz, sample.cloud.xyz, atol=1e-12)
    assert np.array_equal(out.target.values, sample.target.values)


def test_rotation_preserves_point_count_and_colors():
    sample = random_sample(23)
    out = rotate_sample(sample, 3)
    assert len(out.cloud) == len(sample.cloud)
    assert np.array_equal(out.cloud.rgb, sample.cloud.rgb)
    assert np.array_equal(np.sort(out.target.values, axis=None),
                          np.sort(sample.target.values, axis=None))


def test_translation_masks_shifted_in_cells():
    sample = random_sample(24)
    out = translate_sample(sample, shift_cols=2, shift_rows=-1)
    assert not out.target.valid[:, :2].any()
    assert not out.target.valid[-1:, :].any()
    assert len(out.cloud) == len(sample.cloud)
    # overlap: new[i - 1, j + 2] = old[i, j]
    mask = out.target.valid[:-1, 2:]
    old_vals = np.where(sample.target.valid, sample.target.values, 0.0)
    assert np.array_equal(out.target.values[:-1, 2:][mask], old_vals[1:, :-2][mask])
    assert np.array_equal(out.target.valid[:-1, 2:], sample.target.valid[1:, :-2])


def test_gaussian_noise_zero_sigma_unchanged():
    sample = random_sample(25)
    out = augment(sample, seed=5, cfg=AugmentConfig(rotate=False, translate=False, noise_sigma=0.0))
    assert np.array_equal(out.cloud.xyz, sample.cloud.xyz)
    assert np.array_equal(out.image.pixels, sample.image.pixels)


def test_noise_never_touches_target():
    sample = random_sample(26)
    out = augment(
        sample, seed=6, cfg=AugmentConfig(rotate=False, translate=False, noise_sigma=0.05)
    )
    assert np.array_equal(out.target.values, sample.target.values)
    assert np.array_equal(out.target.valid, sample.target.valid)
    assert not np.array_equal(out.cloud.xyz, sample.cloud.xyz)
    assert out.image.pixels.min() >= 0.0 and out.image.pixels.max() <= 1.0


def test_augment_deterministic_per_seed():
    sample = random_sample(27)
    cfg = AugmentConfig(rotate=True, translate=True, max_shift_cells=2, noise_sigma=0.02)
    a = augment(sample, seed=9, cfg=cfg)
    b = augment(sample, seed=9, cfg=cfg)
    c = augment(sample, seed=10, cfg=cfg)
    assert np.array_equal(a.cloud.xyz, b.cloud.xyz)
    assert np.array_equal(a.target.values, b.target.values)
    assert not (
        np.array_equal(a.cloud.xyz, c.cloud.xyz)
        and np.array_equal(a.target.values, c.target.values)
    )


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_zero_epochs_returns_initial_params():
    sample = random_sample(30, grid_size=16)
    cfg = TrainConfig(epochs=0, seed=4, augment=NO_AUG)
    params, history = fit([sample], cfg, TOY_NET)
    assert history == []
    expected = init_params(TOY_NET, seed=4)
    for (_, a), (_, b) in zip(params.named_tensors(), expected.named_tensors()):
        assert np.array_equal(a, b)


def test_fit_same_seed_identical_history():
    data = [random_sample(31 + i, grid_size=16) for i in range(5)]
    cfg = TrainConfig(
        epochs=3, batch_size=2, seed=5,
        augment=AugmentConfig(rotate=True, translate=True, max_shift_cells=1, noise_sigma=0.01),
    )
    _, h1 = fit(data, cfg, TOY_NET)
    _, h2 = fit(data, cfg, TOY_NET)
    assert [(r.step, r.huber, r.smooth, r.total) for r in h1] == [
        (r.step, r.huber, r.smooth, r.total) for r in h2
    ]
    assert len(h1) == 3 * 3  # ceil(5 / 2) batches per epoch


def test_fit_different_seed_differs():
    data = [random_sample(40 + i, grid_size=16) for i in range(4)]
    _, h1 = fit(data, TrainConfig(epochs=2, batch_size=2, seed=1, augment=NO_AUG), TOY_NET)
    _, h2 = fit(data, TrainConfig(epochs=2, batch_size=2, seed=2, augment=NO_AUG), TOY_NET)
    assert [r.total for r in h1] != [r.total for r in h2]


def test_fit_rejects_empty_dataset():
    with pytest.raises(ValueError):
        fit([], TrainConfig(epochs=1), TOY_NET)
