import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmdiffuser.diffusion import (Constraint, DenoiserSpec, DiffusionError, DiffusionModel,
                                  DiffusionSchedule, TemporalUNet, TrainConfig, WindowSampler,
                                  denoise_step, forward_transition, guided_sample, make_schedule,
                                  q_sample, run_reverse_chain, sample_window, sparse_view, train)
from hmdiffuser.nn import Normalizer, ParameterSet
from hmdiffuser.rng import RngStream
from hmdiffuser.tensor import ShapeError, Tensor


def tiny_model(window=8, state_dim=2, n_levels=1, mask_input=False, M=8, seed=0):
    spec = DenoiserSpec(state_dim, window, widths=(8, 16), time_dim=8, n_levels=n_levels,
                        groups=4, mask_input=mask_input)
    norm = Normalizer(np.full(state_dim, -2.0), np.full(state_dim, 2.0))
    return DiffusionModel(spec, make_schedule(M), norm, rng=RngStream(seed, 0))


def _cosine_alpha_bars(M, s=0.008):
    f = [math.cos((m / M + s) / (1 + s) * math.pi / 2) ** 2 for m in range(M + 1)]
    bars = [1.0]
    for m in range(1, M + 1):
        beta = min(1.0 - f[m] / f[m - 1], 0.999)
        bars.append(bars[-1] * (1.0 - beta))
    return np.array(bars)


@pytest.mark.parametrize("M", [8, 64, 100])
def test_cosine_schedule_matches_formula(M):
    sched = make_schedule(M, "cosine")
    np.testing.assert_allclose(sched.alpha_bars, _cosine_alpha_bars(M), rtol=1e-12)
    assert sched.M == M and sched.alpha_bars[-1] < 1e-3


def test_linear_schedule_and_errors():
    sched = make_schedule(100, "linear")
    betas = 1.0 - sched.alphas[1:]
    assert betas[0] == pytest.approx(1e-3) and betas[-1] == pytest.approx(0.2)
    with pytest.raises(DiffusionError):
        make_schedule(1, "linear")
    with pytest.raises(DiffusionError):
        make_schedule(10, "quadratic")
    with pytest.raises(DiffusionError):
        make_schedule(0)
    with pytest.raises(DiffusionError):
        DiffusionSchedule.from_alphas([0.5, 1.5])


def test_posterior_variance():
    sched = DiffusionSchedule.from_alphas([0.9, 0.8, 0.5])
    ab = [1.0, 0.9, 0.72, 0.36]
    assert sched.sigmas[1] == 0.0
    for m in (2, 3):
        beta = 1.0 - sched.alphas[m]
        assert sched.sigmas[m] ** 2 == pytest.approx(beta * (1 - ab[m - 1]) / (1 - ab[m]))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(0, 16), seed=st.integers(0, 2 ** 32 - 1))
def test_q_sample_endpoints_and_dtype(m, seed):
    sched = make_schedule(16)
    g = np.random.default_rng(seed)
    x0 = g.normal(size=(3, 4, 2)).astype(np.float32)
    noise = g.normal(size=x0.shape).astype(np.float32)
    out = q_sample(x0, m, noise, sched)
    assert out.dtype == np.float32
    ab = sched.alpha_bars[m]
    np.testing.assert_allclose(out, math.sqrt(ab) * x0 + math.sqrt(1 - ab) * noise, rtol=1e-5, atol=1e-6)
    if m == 0:
        np.testing.assert_array_equal(out, x0)


def test_q_sample_per_row_steps_and_errors():
    sched = make_schedule(8)
    x0 = np.ones((2, 3, 1), np.float32)
    out = q_sample(x0, np.array([0, 8]), np.zeros_like(x0), sched)
    np.testing.assert_allclose(out[0], 1.0)
    np.testing.assert_allclose(out[1], math.sqrt(sched.alpha_bars[8]), rtol=1e-5)
    with pytest.raises(ShapeError):
        q_sample(x0, 1, np.zeros((2, 3, 2)), sched)
    with pytest.raises(DiffusionError):
        q_sample(x0, 9, np.zeros_like(x0), sched)


def test_composed_transitions_match_closed_form():
    sched = make_schedule(20)
    g = np.random.default_rng(0)
    x0 = np.array([1.5, -0.5])
    n = 20_000
    x = np.tile(x0, (n, 1))
    for m in range(1, 13):
        x = forward_transition(x, m, g.standard_normal(x.shape), sched)
    ab = sched.alpha_bars[12]
    np.testing.assert_allclose(x.mean(0), math.sqrt(ab) * x0, atol=0.03)
    np.testing.assert_allclose(x.var(0), 1 - ab, rtol=0.03)


def test_unet_shapes_and_zero_init():
    for window in (2, 3, 8, 9, 17):
        model = tiny_model(window=window)
        x = np.random.default_rng(0).normal(size=(3, window, 2)).astype(np.float32)
        out = model.eps(x, np.array([1, 4, 8]))
        assert out.shape == (3, window, 2)
        # the output convolution starts at zero
        np.testing.assert_array_equal(out, 0.0)
    with pytest.raises(ShapeError):
        tiny_model().eps(np.zeros((1, 8, 3)), 1)


def _perturbed(model, seed=1):
    g = np.random.default_rng(seed)
    model.params.set_value("final.w", g.normal(size=model.params["final.w"].shape) * 0.3)
    return model


def test_level_and_mask_conditioning_change_output():
    model = _perturbed(tiny_model(n_levels=3, mask_input=True))
    x = np.random.default_rng(0).normal(size=(1, 8, 2)).astype(np.float32)
    a = model.eps(x, 3, levels=1)
    b = model.eps(x, 3, levels=2)
    mask = np.zeros((1, 8), bool)
    mask[0, 0] = True
    c = model.eps(x, 3, levels=1, cond_mask=mask)
    assert not np.allclose(a, b) and not np.allclose(a, c)
    with pytest.raises(DiffusionError):
        model.eps(x, 3)
    with pytest.raises(DiffusionError):
        model.eps(x, 3, levels=4)


def test_unet_gradients_match_finite_differences():
    model = _perturbed(tiny_model(window=6, n_levels=2, mask_input=True))
    p64 = ParameterSet(np.float64)
    for k, t in model.params.items():
        p64.add(k, t.data.astype(np.float64))
    g = np.random.default_rng(3)
    x = g.normal(size=(2, 6, 2))
    weights = g.normal(size=(2, 6, 2))
    mask = np.zeros((2, 6), bool)
    mask[:, 0] = True

    def value():
        out = model.net(p64, Tensor(x), np.array([2, 5]), np.array([1, 2]), mask)
        return (out * Tensor(weights)).sum()

    grads = value().backward()
    h = 1e-6
    for name in ("down0.conv0.w", "mid.gn1.g", "level.0.w", "time.1.b", "up0.skip.w"):
        arr = p64[name].data
        for flat in g.choice(arr.size, 3, replace=False):
            idx = np.unravel_index(flat, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = float(value().data)
            arr[idx] = old - h
            down = float(value().data)
            arr[idx] = old
            fd = (up - down) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def _const_eps(value):
    def fn(x, m, levels, mask):
        return np.full_like(x, value)
    return fn


def test_denoise_step_mean_matches_formula():
    sched = make_schedule(10)
    x = np.random.default_rng(0).normal(size=(2, 4, 3)).astype(np.float32)
    m = 1
    out = denoise_step(_const_eps(0.2), x, m, sched, rngs=[RngStream(0), RngStream(1)])
    a, ab = sched.alphas[m], sched.alpha_bars[m]
    ref = (x - (1 - a) / math.sqrt(1 - ab) * 0.2) / math.sqrt(a)
    np.testing.assert_allclose(out, ref, rtol=1e-5)


@settings(max_examples=20, deadline=None)
@given(m=st.integers(2, 10), eps=st.floats(-0.5, 0.5))
def test_loose_clip_matches_unclipped_mean(m, eps):
    sched = make_schedule(10)
    x = np.random.default_rng(m).normal(size=(1, 4, 2)).astype(np.float32)
    a = denoise_step(_const_eps(eps), x, m, sched, rngs=[RngStream(0)])
    b = denoise_step(_const_eps(eps), x, m, sched, rngs=[RngStream(0)], clip=1e6)
    np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-4)


def test_reverse_chain_rows_follow_their_own_streams():
    sched = make_schedule(6)
    rngs = [RngStream(0, i) for i in range(3)]
    batch = run_reverse_chain(_const_eps(0.1), sched, (3, 5, 2), rngs)
    alone = run_reverse_chain(_const_eps(0.1), sched, (1, 5, 2), [RngStream(0, 1)])
    np.testing.assert_array_equal(batch[1], alone[0])
    with pytest.raises(DiffusionError):
        run_reverse_chain(_const_eps(0.0), sched, (2, 5, 2), rngs)


@pytest.mark.parametrize("mode", ["clean", "noised"])
def test_inpainted_entries_are_exact(mode):
    model = _perturbed(tiny_model())
    model.inpaint = mode
    g = np.random.default_rng(0)
    values = g.uniform(-2, 2, size=(4, 8, 2)).astype(np.float32)
    mask = g.uniform(size=(4, 8)) < 0.3
    mask[:, 0] = True
    out = sample_window(model, Constraint(mask, values), rngs=[RngStream(5, i) for i in range(4)])
    np.testing.assert_array_equal(out[mask], values[mask])


def test_constraint_builders():
    c = Constraint.at(5, 2, {0: [1, 2], -1: [3, 4]})
    assert c.mask.tolist() == [[True, False, False, False, True]]
    assert c.values[0, 4].tolist() == [3, 4]
    both = Constraint.stack([c, c])
    assert both.batch == 2 and both.window == 5
    with pytest.raises(DiffusionError):
        Constraint.at(5, 2, {5: [0, 0]})
    with pytest.raises(ShapeError):
        Constraint(np.zeros((1, 4), bool), np.zeros((1, 5, 2)))
    with pytest.raises(DiffusionError):
        sample_window(tiny_model(), Constraint(np.zeros((1, 8), bool), np.zeros((1, 8, 2))), rngs=RngStream(0))


def test_guidance_pushes_samples_uphill():
    model = tiny_model()
    c = Constraint.stack([Constraint.at(8, 2, {0: [0.0, 0.0]})] * 16)
    rngs = [RngStream(1, i) for i in range(16)]
    plain = sample_window(model, c, rngs=rngs)
    rngs = [RngStream(1, i) for i in range(16)]
    pushed = guided_sample(model, c, lambda x: x[:, :, 0].sum(), 5.0, rngs)
    assert pushed[:, 1:, 0].mean() > plain[:, 1:, 0].mean() + 0.1


def _toy_batches(rng, batch):
    # windows along straight lines with random slope, in normalized space
    slope = rng.uniform(-0.1, 0.1, (batch, 1, 1))
    x0 = (slope * np.arange(8)[None, :, None] * np.ones((1, 1, 2))).astype(np.float32)
    return x0, None, None


def test_training_lowers_loss_and_resumes_exactly(tmp_path):
    model = tiny_model(M=16)
    cfg = TrainConfig(steps=60, batch=16, lr=3e-3)
    losses = train(model, _toy_batches, cfg, RngStream(0, 2))
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:5])

    full = tiny_model(M=16)
    train(full, _toy_batches, TrainConfig(steps=6, batch=4), RngStream(0, 2))
    part = tiny_model(M=16)
    train(part, _toy_batches, TrainConfig(steps=3, batch=4), RngStream(0, 2))
    part.save(tmp_path / "ck")
    resumed = DiffusionModel.load(tmp_path / "ck")
    train(resumed, _toy_batches, TrainConfig(steps=6, batch=4), RngStream(0, 2))
    for k in full.params:
        np.testing.assert_array_equal(resumed.params[k].data, full.params[k].data)


def test_save_load_preserves_sampling(tmp_path):
    model = _perturbed(tiny_model(n_levels=2))
    model.save(tmp_path / "m")
    back = DiffusionModel.load(tmp_path / "m")
    assert back.clip == model.clip and back.inpaint == "clean"
    c = Constraint.at(8, 2, {0: [0.5, 0.5], -1: [1.0, -1.0]})
    a = sample_window(model, c, level=2, rngs=RngStream(9))
    b = sample_window(back, c, level=2, rngs=RngStream(9))
    np.testing.assert_array_equal(a, b)


def test_sparse_view_and_window_sampler():
    traj = np.arange(40, dtype=np.float32).reshape(20, 2)
    np.testing.assert_array_equal(sparse_view(traj, 3, 4, 2)[:, 0], [4, 10, 16, 22, 28])
    with pytest.raises(DiffusionError):
        sparse_view(traj, 5, 4, 0)
    norm = Normalizer(np.zeros(2), np.full(2, 39.0))
    sampler = WindowSampler([traj, traj[:6]], {1: (1, 4), 2: (3, 4)}, norm)
    for i in range(20):
        x0, levels, mask = sampler(RngStream(0).child(i), 5)
        raw = norm.inverse(x0)
        j = {1: 1, 2: 3}[levels[0]]
        np.testing.assert_allclose(np.diff(raw[:, :, 0], axis=1), 2 * j, atol=1e-3)
        assert not mask[:, 0].any() and not mask[:, -1].any() and mask[:, 1:-1].all()
    assert sum(sampler.level_counts.values()) == 20
    with pytest.raises(DiffusionError):
        WindowSampler([traj[:3]], {1: (1, 4)}, norm)


def test_tail_masks_keep_a_free_entry():
    traj = np.zeros((30, 2), np.float32)
    sampler = WindowSampler([traj], {1: (1, 7)}, Normalizer(np.zeros(2), np.ones(2)),
                            constrained=(0,), level_conditioned=False, tail_prob=1.0)
    _, levels, mask = sampler(RngStream(0), 200)
    assert levels is None
    assert not mask[:, 0].any()
    assert mask[:, 1].all()
    assert (~mask[:, -1]).all()


def test_q_sample_variance_monte_carlo():
    sched = make_schedule(64)
    g = np.random.default_rng(4)
    for m in (5, 30, 60):
        x = q_sample(np.zeros((100_000, 1)), m, g.standard_normal((100_000, 1)), sched)
        assert x.var() == pytest.approx(1.0 - sched.alpha_bars[m], rel=0.02)


def _two_point_eps(sched):
    # exact noise prediction for data drawn uniformly from {-1, +1}
    def eps(x, m, levels, mask):
        ab = sched.alpha_bars[int(m[0])]
        mean_x0 = np.tanh(math.sqrt(ab) * x / (1.0 - ab))
        return (x - math.sqrt(ab) * mean_x0) / math.sqrt(1.0 - ab)
    return eps


def _two_point_samples(guide_grad=None, scale=0.0, n=10_000):
    sched = make_schedule(50)
    rngs = [RngStream(13, i) for i in range(n)]
    return run_reverse_chain(_two_point_eps(sched), sched, (n, 1, 1), rngs,
                             guide_grad=guide_grad, guide_scale=scale).ravel()


def test_reverse_chain_recovers_two_point_marginal():
    x = _two_point_samples()
    counts, edges = np.histogram(x, bins=np.linspace(-2, 2, 81))
    centres = 0.5 * (edges[1:] + edges[:-1])
    neg, pos = centres < 0, centres > 0
    assert abs(centres[neg][np.argmax(counts[neg])] + 1) < 0.1
    assert abs(centres[pos][np.argmax(counts[pos])] - 1) < 0.1
    assert 0.45 < np.mean(x > 0) < 0.55
    assert np.mean(np.abs(np.abs(x) - 1) < 0.1) > 0.95


def test_guidance_selects_the_favoured_mode():
    x = _two_point_samples(lambda x: np.ones_like(x), scale=4.0)
    assert np.mean(x > 0) >= 0.9


def test_training_curve_on_toy_trajectories():
    g = np.random.default_rng(5)
    trajs = []
    for _ in range(50):
        start, slope = g.uniform(-1, 1, 2), g.uniform(-0.05, 0.05, 2)
        trajs.append((start + slope * np.arange(30)[:, None]).astype(np.float32))
    model = tiny_model(M=16)
    sampler = WindowSampler(trajs, {1: (1, 7)}, model.normalizer, level_conditioned=False)
    losses = train(model, lambda r, b: sampler(r, b), TrainConfig(steps=200, batch=16, lr=3e-3),
                   RngStream(0, 5))
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


@given(j=st.integers(1, 6), k=st.integers(1, 6), offset=st.integers(0, 10), n=st.integers(2, 60))
def test_sparse_view_matches_loop(j, k, offset, n):
    states = np.arange(2 * n, dtype=np.float32).reshape(n, 2)
    if offset + j * k >= n:
        with pytest.raises(DiffusionError):
            sparse_view(states, j, k, offset)
        return
    expected = np.array([states[offset + i * j] for i in range(k + 1)])
    np.testing.assert_array_equal(sparse_view(states, j, k, offset), expected)


def test_window_levels_are_drawn_uniformly():
    traj = np.zeros((60, 2), np.float32)
    sampler = WindowSampler([traj], {1: (1, 5), 2: (5, 5), 3: (25, 2)},
                            Normalizer(np.zeros(2), np.ones(2)))
    n = 3000
    for i in range(n):
        sampler(RngStream(6).child(i), 1)
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    for count in sampler.level_counts.values():
        assert abs(count - n * p) < 3 * sigma
