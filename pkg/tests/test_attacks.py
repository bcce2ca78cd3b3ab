"""Gradient attacks: projection geometry, budget feasibility, flip search."""

import numpy as np
import pytest

from manifoldrisk import attacks


def _linear_score_setup(theta):
    theta = np.asarray(theta, dtype=np.float64)

    def classify(x):
        s = x @ theta
        return np.where(s >= 0, 1, -1)

    def grad_fn(x, y):
        # loss = -y * score, gradient constant in x
        return -np.asarray(y)[:, None] * theta

    def loss_fn(x, y):
        return -np.asarray(y) * (x @ theta)

    return classify, grad_fn, loss_fn


def test_project_inside_unchanged():
    rng = np.random.default_rng(0)
    center = rng.standard_normal(4)
    p = center + 0.3 * rng.standard_normal(4)
    out = attacks.project_l2_ball(p, center, 10.0)
    assert np.array_equal(out, p)


def test_project_outside_lands_on_sphere():
    center = np.zeros(3)
    p = np.array([3.0, 4.0, 0.0])
    out = attacks.project_l2_ball(p, center, 1.0)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
    # direction preserved
    assert np.allclose(out, p / 5.0)


def test_project_idempotent_and_batched_radii():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 5)) * 3
    center = rng.standard_normal((20, 5))
    radii = rng.uniform(0.1, 2.0, size=20)
    once = attacks.project_l2_ball(x, center, radii)
    twice = attacks.project_l2_ball(once, center, radii)
    assert np.allclose(once, twice, atol=1e-14)
    dists = np.linalg.norm(once - center, axis=1)
    assert np.all(dists <= radii + 1e-12)


def test_project_matches_plane_oracle():
    # in d=2 the projection is center + r * unit(diff) for exterior points
    center = np.array([1.0, -1.0])
    p = np.array([4.0, 3.0])
    r = 2.0
    diff = p - center
    want = center + r * diff / np.linalg.norm(diff)
    got = attacks.project_l2_ball(p, center, r)
    assert np.allclose(got, want, atol=1e-14)


def test_attack_config_validation():
    with pytest.raises(ValueError):
        attacks.AttackConfig(kind="bim", epsilon=1.0)
    with pytest.raises(ValueError):
        attacks.AttackConfig(kind="fgm", epsilon=-0.5)
    with pytest.raises(ValueError):
        attacks.AttackConfig(kind="pgd", epsilon=1.0, steps=0)
    with pytest.raises(ValueError):
        attacks.AttackConfig(kind="pgd", epsilon=1.0, step_size=0.0)
    with pytest.raises(ValueError):
        attacks.AttackConfig(kind="fgm", epsilon=1.0, clip=(1.0, 0.0))


def test_fgm_budget_exact():
    rng = np.random.default_rng(2)
    theta = rng.standard_normal(6)
    _, grad_fn, _ = _linear_score_setup(theta)
    x = rng.standard_normal((30, 6))
    y = np.where(rng.random(30) < 0.5, 1, -1)
    cfg = attacks.AttackConfig(kind="fgm", epsilon=0.75)
    x_adv, zero = attacks.fgm_batch(x, y, grad_fn, cfg)
    assert not zero.any()
    moved = np.linalg.norm(x_adv - x, axis=1)
    assert np.allclose(moved, 0.75, atol=1e-12)
    # the step lowers the label-signed score by exactly eps ||theta||
    drop = y * (x @ theta) - y * (x_adv @ theta)
    assert np.allclose(drop, 0.75 * np.linalg.norm(theta), atol=1e-10)


def test_fgm_zero_gradient_flagged():
    cfg = attacks.AttackConfig(kind="fgm", epsilon=1.0)
    x = np.ones((3, 2))
    y = np.array([1, -1, 1])
    x_adv, zero = attacks.fgm_batch(
        x, y, lambda xs, ys: np.zeros_like(xs), cfg)
    assert zero.all()
    assert np.array_equal(x_adv, x)


def test_clip_box_respected():
    rng = np.random.default_rng(3)
    theta = rng.standard_normal(4)
    _, grad_fn, loss_fn = _linear_score_setup(theta)
    x = rng.uniform(0, 1, size=(25, 4))
    y = np.where(rng.random(25) < 0.5, 1, -1)
    for kind in ("fgm", "pgd"):
        cfg = attacks.AttackConfig(kind=kind, epsilon=0.9, steps=10,
                                   clip=(0.0, 1.0))
        x_adv, _ = attacks.run_attack_batch(x, y, grad_fn, cfg,
                                            loss_fn=loss_fn)
        assert np.all(x_adv >= 0.0) and np.all(x_adv <= 1.0)
        assert np.all(np.linalg.norm(x_adv - x, axis=1) <= 0.9 + 1e-9)


def test_pgd_at_least_as_strong_as_fgm_on_linear():
    """With keep_best and a loss, PGD's final loss dominates FGM's."""
    rng = np.random.default_rng(4)
    theta = rng.standard_normal(5)
    _, grad_fn, loss_fn = _linear_score_setup(theta)
    x = rng.standard_normal((40, 5))
    y = np.where(rng.random(40) < 0.5, 1, -1)
    eps = 0.6
    f_cfg = attacks.AttackConfig(kind="fgm", epsilon=eps)
    p_cfg = attacks.AttackConfig(kind="pgd", epsilon=eps, steps=20,
                                 keep_best=True)
    x_f, _ = attacks.run_attack_batch(x, y, grad_fn, f_cfg)
    x_p, _ = attacks.run_attack_batch(x, y, grad_fn, p_cfg, loss_fn=loss_fn)
    assert np.all(loss_fn(x_p, y) >= loss_fn(x_f, y) - 1e-9)


def test_pgd_flip_mask_counts_visited_iterates():
    theta = np.array([1.0])
    classify, grad_fn, loss_fn = _linear_score_setup(theta)
    # sample at +0.5 with label +1 flips once the iterate crosses zero
    x = np.array([[0.5], [0.5], [-0.3]])
    y = np.array([1, 1, 1])
    cfg = attacks.AttackConfig(kind="pgd", epsilon=1.0, steps=10)
    _, flipped = attacks.pgd_batch(x, y, grad_fn, cfg, loss_fn=loss_fn,
                                   classify=classify)
    assert flipped[0] and flipped[1]
    # third sample is misclassified clean, counted as flipped
    assert flipped[2]
    # a tiny budget cannot flip anything clean-correct
    small = attacks.AttackConfig(kind="pgd", epsilon=0.1, steps=10)
    _, f2 = attacks.pgd_batch(x, y, grad_fn, small, loss_fn=loss_fn,
                              classify=classify)
    assert not f2[0] and not f2[1] and f2[2]


def test_fgm_flip_mask_includes_clean_errors():
    theta = np.array([1.0])
    classify, grad_fn, _ = _linear_score_setup(theta)
    x = np.array([[2.0], [-0.1]])
    y = np.array([1, 1])
    cfg = attacks.AttackConfig(kind="fgm", epsilon=0.5)
    _, flipped = attacks.run_attack_batch(x, y, grad_fn, cfg,
                                          classify=classify)
    assert not flipped[0]
    assert flipped[1]


def test_minimal_radius_linear_margin():
    """For sign(theta^T x) the exact flip radius is margin / ||theta||."""
    rng = np.random.default_rng(5)
    theta = rng.standard_normal(3)
    classify, grad_fn, loss_fn = _linear_score_setup(theta)
    x0 = rng.standard_normal(3)
    y0 = int(classify(x0[None, :])[0])
    margin = abs(x0 @ theta) / np.linalg.norm(theta)

    def flips(eps):
        cfg = attacks.AttackConfig(kind="pgd", epsilon=eps, steps=30)
        _, f = attacks.pgd_batch(x0[None, :], np.array([y0]), grad_fn, cfg,
                                 loss_fn=loss_fn, classify=classify)
        return bool(f[0])

    hi = margin * 4 + 1.0
    search = attacks.RadiusSearch(lo=0.0, hi=hi, iters=12)
    res = attacks.minimal_adversarial_radius(flips, search)
    assert res.found
    assert abs(res.radius - margin) <= hi / 2 ** 12 + 1e-9


def test_minimal_radius_never_flips():
    search = attacks.RadiusSearch(lo=0.0, hi=2.0, iters=5)
    res = attacks.minimal_adversarial_radius(lambda eps: False, search)
    assert not res.found
    assert res.radius == 2.0
    grid = attacks.RadiusSearch(eps_grid=(0.1, 0.5, 1.0))
    res = attacks.minimal_adversarial_radius(lambda eps: False, grid)
    assert not res.found
    assert res.radius == 1.0


def test_minimal_radius_grid_mode():
    grid = attacks.RadiusSearch(eps_grid=(0.1, 0.5, 1.0, 2.0))
    res = attacks.minimal_adversarial_radius(lambda eps: eps >= 0.8, grid)
    assert res.found
    assert res.radius == 1.0


def test_radius_search_validation():
    with pytest.raises(ValueError):
        attacks.RadiusSearch()


def test_bisect_batch_matches_scalar():
    rng = np.random.default_rng(6)
    thresholds = rng.uniform(0.2, 3.0, size=15)

    def flips_at(eps):
        return eps >= thresholds

    radii, found = attacks.minimal_radius_bisect_batch(
        flips_at, 15, 0.0, 4.0, iters=10)
    assert found.all()
    for i in range(15):
        res = attacks.minimal_adversarial_radius(
            lambda e: e >= thresholds[i],
            attacks.RadiusSearch(lo=0.0, hi=4.0, iters=10))
        assert radii[i] == pytest.approx(res.radius, abs=1e-12)
    assert np.all(np.abs(radii - thresholds) <= 4.0 / 2 ** 10 + 1e-12)


def test_bisect_batch_mixed_outcomes():
    thresholds = np.array([0.0, 1.0, 10.0])

    def flips_at(eps):
        return eps >= thresholds

    radii, found = attacks.minimal_radius_bisect_batch(
        flips_at, 3, 0.0, 2.0, iters=8)
    assert found[0] and found[1] and not found[2]
    assert radii[0] == 0.0
    assert abs(radii[1] - 1.0) <= 2.0 / 2 ** 8
    assert radii[2] == 2.0


def test_single_sample_wrappers():
    theta = np.array([2.0, 0.0])
    _, grad_fn, _ = _linear_score_setup(theta)

    def loss_gradient(x, y):
        return -y * theta

    cfg = attacks.AttackConfig(kind="fgm", epsilon=0.5)
    res = attacks.fgm(np.array([1.0, 1.0]), 1, loss_gradient, cfg)
    assert not res.zero_gradient
    assert np.allclose(res.x, np.array([0.5, 1.0]), atol=1e-12)
    pcfg = attacks.AttackConfig(kind="pgd", epsilon=0.5, steps=5)
    pres = attacks.pgd(np.array([1.0, 1.0]), 1, loss_gradient, pcfg,
                       loss_fn=lambda x, y: -y * (x @ theta))
    assert np.linalg.norm(pres.x - np.array([1.0, 1.0])) <= 0.5 + 1e-12
