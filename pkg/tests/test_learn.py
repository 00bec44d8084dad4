"""Policy networks, gradient checking, PPO machinery, distillation losses,
and checkpoint round trips."""

import json
import math

import numpy as np
import pytest
import torch

from deskmanip.core import RngStream
from deskmanip.learn import (AttnBlock, DistillConfig, PpoConfig,
                             StudentPolicy, TrackerPolicy, TrainConfig,
                             build_from_descriptor, checkpoint_load,
                             checkpoint_save, cosine_alpha_bar, cvae_act,
                             ddpm_sample, distill, gae, gaussian_kl,
                             grad_check, head_loss, mlp, pad_tokens,
                             ppo_update, student_act, train_tracker)
from deskmanip.learn.nets import STUDENT_OBS_DIM
from deskmanip.maskgoal import GoalMask, build_versatile_goal, sample_mask
from deskmanip.motion import generate_clip
from deskmanip.motion.clip import Dataset
from deskmanip.physics import ACTION_DIM, WorldState
from deskmanip.trackenv import GOAL_DIM, OBS_DIM


def gen_(seed):
    return torch.Generator().manual_seed(seed)


def rand_student_batch(b=2, n_tokens=3, seed=11):
    g = gen_(seed)
    return {
        "s": torch.randn(b, STUDENT_OBS_DIM, dtype=torch.float64,
                         generator=g),
        "tokens": torch.randn(b, n_tokens, 11, dtype=torch.float64,
                              generator=g),
        "tmask": torch.ones(b, n_tokens, dtype=torch.bool),
        "track_goal": torch.randn(b, GOAL_DIM, dtype=torch.float64,
                                  generator=g),
        "actions": torch.randn(b, ACTION_DIM, dtype=torch.float64,
                               generator=g) * 0.5,
    }


@pytest.fixture(scope="module")
def clip():
    return generate_clip("pick_place")


@pytest.fixture(scope="module")
def tiny_dataset(clip):
    return Dataset(clips=[clip], train_ids=[clip.clip_id], test_ids=[])


# --- construction ---------------------------------------------------------


def test_mlp_layout():
    net = mlp([4, 8, 3])
    kinds = [type(m).__name__ for m in net]
    assert kinds == ["Linear", "Tanh", "Linear"]
    y = net.double()(torch.zeros(5, 4, dtype=torch.float64))
    assert y.shape == (5, 3)


def test_init_deterministic_per_seed():
    a = TrackerPolicy(seed=3).state_dict()
    b = TrackerPolicy(seed=3).state_dict()
    c = TrackerPolicy(seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not torch.equal(a["trunk.0.weight"], c["trunk.0.weight"])


def test_tracker_mean_finite_and_log_std_clamped():
    pol = TrackerPolicy(seed=0)
    x = torch.randn(4, OBS_DIM + GOAL_DIM, dtype=torch.float64,
                    generator=gen_(0)) * 3.0
    mean, log_std = pol(x)
    assert torch.isfinite(mean).all()
    with torch.no_grad():
        pol.log_std.fill_(-10.0)
    assert pol(x)[1].max().item() == -5.0
    with torch.no_grad():
        pol.log_std.fill_(3.0)
    assert pol(x)[1].max().item() == 1.0


def test_tracker_act_mean_mode_and_logp():
    pol = TrackerPolicy(seed=0)
    x = torch.randn(3, OBS_DIM + GOAL_DIM, dtype=torch.float64,
                    generator=gen_(1))
    a, logp = pol.act(x, None)
    assert logp is None
    assert torch.equal(a, pol(x)[0])
    a, logp = pol.act(x, gen_(2))
    ref = pol.dist(x).log_prob(a).sum(-1)
    assert torch.allclose(logp, ref, atol=1e-12)


def test_goal_input_scaling_by_horizon():
    s = TrackerPolicy(seed=0).goal_scale
    assert s[0].item() == 30.0 and s[1].item() == 30.0    # near positions
    assert s[2].item() == 1.0                             # near rotations
    assert s[44].item() == 30.0 and s[45].item() == 30.0  # near object
    assert s[48].item() == 1.0                            # flags untouched
    assert s[59].item() == 1.0                            # far positions
    assert s[59 + 44].item() == 1.0


def test_attention_width_must_divide_heads():
    with pytest.raises(ValueError, match="heads"):
        AttnBlock(dim=130, heads=4)


def test_unknown_head_rejected():
    with pytest.raises(ValueError, match="head"):
        StudentPolicy("gaussian")


def test_descriptor_round_trip():
    for net in (TrackerPolicy(seed=0), StudentPolicy("cvae", seed=0)):
        clone = build_from_descriptor(net.descriptor())
        assert type(clone) is type(net)
        ours = {k: tuple(v.shape) for k, v in net.state_dict().items()}
        theirs = {k: tuple(v.shape) for k, v in clone.state_dict().items()}
        assert ours == theirs
    with pytest.raises(ValueError, match="kind"):
        build_from_descriptor({"kind": "rnn"})


# --- gradient checking ----------------------------------------------------


def test_grad_check_affine_quadratic():
    net = torch.nn.Linear(4, 3).double()
    x = torch.randn(5, 4, dtype=torch.float64, generator=gen_(0))
    err = grad_check(net, lambda: (net(x) ** 2).sum())
    assert err <= 1e-7


def test_grad_check_zero_parameter_net():
    assert grad_check(torch.nn.Tanh(), lambda: torch.tensor(0.0)) == 0.0


def test_grad_check_eps_validation():
    net = torch.nn.Linear(2, 2).double()
    for eps in (1e-7, 1e-2):
        with pytest.raises(ValueError, match="eps"):
            grad_check(net, lambda: (net.weight ** 2).sum(), eps=eps)


def test_grad_check_rejects_nonfinite_loss():
    net = torch.nn.Linear(2, 2).double()
    with pytest.raises(ValueError, match="finite"):
        grad_check(net, lambda: net.weight.sum() / 0.0)


def test_grad_check_tracker():
    pol = TrackerPolicy(seed=0)
    x = torch.randn(2, OBS_DIM + GOAL_DIM, dtype=torch.float64,
                    generator=gen_(5))

    def loss():
        mean, log_std = pol(x)
        return (mean ** 2).sum() + log_std.sum() + (pol.value(x) ** 2).sum()

    assert grad_check(pol, loss) <= 1e-4


@pytest.mark.parametrize("head", ["deterministic", "cvae", "diffusion"])
def test_grad_check_student_three_tokens(head):
    stu = StudentPolicy(head, seed=7)
    batch = rand_student_batch(n_tokens=3)
    cfg = DistillConfig()

    def loss():
        return head_loss(stu, batch, cfg, gen_(5))

    assert grad_check(stu, loss) <= 1e-4


# --- advantage estimation -------------------------------------------------


def test_gae_single_terminal_step():
    adv, ret = gae([1.0], [0.0, 0.0], [True], 0.99, 0.95)
    assert adv.tolist() == [1.0] and ret.tolist() == [1.0]


def test_gae_two_step_hand_value():
    adv, ret = gae([0.0, 1.0], [0.0, 0.0, 0.0], [False, True], 0.99, 0.95)
    assert np.allclose(adv, [0.99 * 0.95, 1.0])
    assert np.allclose(ret, adv)


def test_gae_all_zero():
    adv, ret = gae(np.zeros(5), np.zeros(6), np.zeros(5, dtype=bool),
                   0.99, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_bootstraps_nonterminal_tail():
    adv, _ = gae([0.0], [0.0, 1.0], [False], 0.99, 0.95)
    assert np.allclose(adv, [0.99])
    adv, _ = gae([0.0], [0.0, 1.0], [True], 0.99, 0.95)
    assert adv[0] == 0.0


def test_gae_batched_matches_per_env():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(6, 3))
    v = rng.normal(size=(7, 3))
    term = rng.random(size=(6, 3)) < 0.3
    adv, ret = gae(r, v, term, 0.99, 0.95)
    for e in range(3):
        a1, r1 = gae(r[:, e], v[:, e], term[:, e], 0.99, 0.95)
        assert np.allclose(adv[:, e], a1) and np.allclose(ret[:, e], r1)


def test_gae_shape_validation():
    with pytest.raises(ValueError, match="values"):
        gae([1.0, 0.0], [0.0, 0.0], [True, True], 0.99, 0.95)


# --- PPO updates ----------------------------------------------------------


def small_policy_batch(pol, n=16, seed=3):
    x = torch.randn(n, pol.obs_dim + pol.goal_dim, dtype=torch.float64,
                    generator=gen_(seed))
    a, logp = pol.act(x, gen_(seed + 1))
    return {"inputs": x, "actions": a, "logp": logp,
            "advantages": torch.zeros(n, dtype=torch.float64),
            "returns": torch.randn(n, dtype=torch.float64,
                                   generator=gen_(seed + 2)),
            "shuffle_gen": gen_(seed + 3)}


def test_ppo_config_validation():
    with pytest.raises(ValueError, match="gamma"):
        PpoConfig(gamma=1.0)
    with pytest.raises(ValueError, match="lr"):
        PpoConfig(lr=-1.0)


def test_zero_advantages_leave_action_params_untouched():
    pol = TrackerPolicy(obs_dim=4, goal_dim=4, act_dim=2, seed=0)
    opt = torch.optim.Adam(pol.parameters(), lr=1e-3)
    batch = small_policy_batch(pol)
    before = {k: v.clone() for k, v in pol.state_dict().items()}
    stats = ppo_update(batch, pol, opt, PpoConfig())
    assert stats["policy_loss"] == 0.0
    for k, v in pol.state_dict().items():
        if k.startswith("v_"):
            continue
        assert torch.equal(v, before[k]), k
    assert not torch.equal(pol.state_dict()["v_head.bias"],
                           before["v_head.bias"])


def test_fresh_batch_has_zero_clip_fraction():
    pol = TrackerPolicy(obs_dim=4, goal_dim=4, act_dim=2, seed=1)
    opt = torch.optim.Adam(pol.parameters(), lr=1e-3)
    batch = small_policy_batch(pol)
    batch["advantages"] = torch.randn(16, dtype=torch.float64,
                                      generator=gen_(9))
    cfg = PpoConfig(epochs=1, minibatches=1)
    stats = ppo_update(batch, pol, opt, cfg)
    assert stats["clip_fraction"] == 0.0
    assert abs(stats["approx_kl"]) < 1e-12


def test_kl_runaway_aborts_batch():
    pol = TrackerPolicy(obs_dim=4, goal_dim=4, act_dim=2, seed=2)
    opt = torch.optim.Adam(pol.parameters(), lr=1e-3)
    batch = small_policy_batch(pol)
    batch["logp"] = batch["logp"] + 10.0
    batch["advantages"] = torch.randn(16, dtype=torch.float64,
                                      generator=gen_(9))
    stats = ppo_update(batch, pol, opt, PpoConfig())
    assert stats["aborted"]


def test_nonfinite_batch_raises():
    pol = TrackerPolicy(obs_dim=4, goal_dim=4, act_dim=2, seed=2)
    opt = torch.optim.Adam(pol.parameters(), lr=1e-3)
    batch = small_policy_batch(pol)
    batch["advantages"] = torch.full((16,), torch.inf, dtype=torch.float64)
    with pytest.raises(RuntimeError, match="finite"):
        ppo_update(batch, pol, opt, PpoConfig())


def test_bandit_prefers_rewarded_action():
    # one-step problem: reward 1 whenever action[0] lands positive
    cfg = PpoConfig(lr=1e-2, n_envs=1, rollout=1, epochs=2, minibatches=2)
    pol = TrackerPolicy(obs_dim=2, goal_dim=2, act_dim=1, seed=0)
    opt = torch.optim.Adam(pol.parameters(), lr=cfg.lr)
    gen = gen_(0)
    x = torch.zeros(64, 4, dtype=torch.float64)
    p = 0.0
    for update in range(200):
        a, logp = pol.act(x, gen)
        r = (a[:, 0] > 0).double()
        batch = {"inputs": x, "actions": a, "logp": logp,
                 "advantages": r - r.mean(), "returns": r,
                 "shuffle_gen": gen}
        ppo_update(batch, pol, opt, cfg)
        with torch.no_grad():
            mean, log_std = pol(x[:1])
        z = mean[0, 0].item() / math.exp(log_std[0, 0].item())
        p = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
        if p > 0.9:
            break
    assert p > 0.9, f"P(a0 > 0) only reached {p:.3f}"


# --- C-VAE head -----------------------------------------------------------


def test_kl_zero_iff_equal():
    g = gen_(0)
    mu = torch.randn(4, 32, dtype=torch.float64, generator=g)
    ls = torch.randn(4, 32, dtype=torch.float64, generator=g) * 0.3
    assert torch.all(gaussian_kl(mu, ls, mu, ls) == 0.0)
    mu2 = torch.randn(4, 32, dtype=torch.float64, generator=g)
    ls2 = torch.randn(4, 32, dtype=torch.float64, generator=g) * 0.3
    kl = gaussian_kl(mu, ls, mu2, ls2)
    assert torch.all(kl > 0.0)


def test_kl_nonnegative_on_random_draws():
    g = gen_(1)
    draws = [torch.randn(1000, 8, dtype=torch.float64, generator=g)
             for _ in range(4)]
    kl = gaussian_kl(draws[0], draws[1] * 0.5, draws[2], draws[3] * 0.5)
    assert kl.min().item() >= -1e-12


def test_posterior_mean_is_prior_plus_offset():
    stu = StudentPolicy("cvae", seed=0)
    batch = rand_student_batch()
    mu_p, ls_p = stu.prior(batch["s"], batch["tokens"], batch["tmask"])
    mu_q, ls_q = stu.posterior(batch["s"], batch["track_goal"], mu_p, ls_p)
    g = batch["track_goal"] * stu.track_goal_scale
    x = torch.cat([batch["s"], g, mu_p, ls_p], dim=-1)
    d_mu, _ = stu.encoder_net(x).chunk(2, dim=-1)
    assert torch.allclose(mu_q, mu_p + d_mu, atol=1e-12)
    assert ls_q.min().item() >= -5.0 and ls_q.max().item() <= 2.0


def test_cvae_act_mean_mode_and_diversity():
    stu = StudentPolicy("cvae", seed=0)
    batch = rand_student_batch(b=1)
    s, tok = batch["s"], batch["tokens"]
    a_mean = cvae_act(stu, s, tok, None)
    mu, _ = stu.prior(s, tok)
    assert torch.equal(a_mean, stu.decode(s, tok, mu))
    a1 = cvae_act(stu, s, tok, gen_(1))
    a2 = cvae_act(stu, s, tok, gen_(2))
    assert not torch.equal(a1, a2)


def test_action_spread_grows_with_prior_scale():
    stu = StudentPolicy("cvae", seed=0)
    batch = rand_student_batch(b=1)
    s, tok = batch["s"], batch["tokens"]
    mu, ls = stu.prior(s, tok)
    g = gen_(3)
    eps = torch.randn(256, mu.shape[-1], dtype=torch.float64, generator=g)
    spreads = []
    for f in (0.0, 0.5, 1.0, 2.0):
        z = mu + f * ls.exp() * eps
        acts = stu.decode(s.expand(256, -1), tok.expand(256, -1, -1), z)
        spreads.append(acts.var(dim=0).mean().item())
    assert spreads[0] == 0.0
    assert spreads[0] < spreads[1] < spreads[2] < spreads[3]


# --- diffusion head -------------------------------------------------------


def test_schedule_endpoints_and_monotonicity():
    ab = cosine_alpha_bar()
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0.0)
    assert ab[-1] > 0.0


class _ExactDenoiser:
    """Predicts the exact noise consistent with a fixed clean target."""

    def __init__(self, target):
        self.target = target
        self.act_dim = target.shape[-1]
        self.diffusion_steps = 16
        self.alpha_bar = torch.tensor(cosine_alpha_bar(16),
                                      dtype=torch.float64)

    def predict_noise(self, s, tokens, noisy, j, token_mask=None):
        ab = self.alpha_bar[j][:, None]
        return (noisy - torch.sqrt(ab) * self.target) / torch.sqrt(1.0 - ab)


def test_exact_denoiser_recovers_point_mass():
    target = torch.tensor([[0.3, -0.5, 0.1]], dtype=torch.float64)
    net = _ExactDenoiser(target)
    s = torch.zeros(5, 1, dtype=torch.float64)
    tok = torch.zeros(5, 0, 11, dtype=torch.float64)
    a = ddpm_sample(net, s, tok, gen_(0))
    assert torch.allclose(a, target.expand(5, -1), atol=1e-3)


class _ZeroDenoiser:
    def __init__(self, act_dim=3, n=16):
        self.act_dim = act_dim
        self.diffusion_steps = n
        self.alpha_bar = torch.tensor(cosine_alpha_bar(n),
                                      dtype=torch.float64)

    def predict_noise(self, s, tokens, noisy, j, token_mask=None):
        return torch.zeros_like(noisy)


def test_single_step_zero_noise_formula():
    net = _ZeroDenoiser()
    s = torch.zeros(4, 1, dtype=torch.float64)
    tok = torch.zeros(4, 0, 11, dtype=torch.float64)
    a = ddpm_sample(net, s, tok, gen_(7), n_steps=1)
    start = torch.empty(4, 3, dtype=torch.float64)
    start.normal_(generator=gen_(7))
    expected = (start / math.sqrt(net.alpha_bar[1].item())).clamp(-1.0, 1.0)
    assert torch.allclose(a, expected, atol=1e-12)


def test_sample_step_count_validated():
    stu = StudentPolicy("diffusion", seed=0)
    batch = rand_student_batch(b=1)
    for bad in (0, 17):
        with pytest.raises(ValueError, match="steps"):
            ddpm_sample(stu, batch["s"], batch["tokens"], gen_(0),
                        n_steps=bad)


def test_sampling_finite_and_boxed():
    stu = StudentPolicy("diffusion", seed=0)
    batch = rand_student_batch(b=3)
    a = ddpm_sample(stu, batch["s"], batch["tokens"], gen_(0))
    assert torch.isfinite(a).all()
    assert a.abs().max().item() <= 1.0


def test_noise_head_overfits_one_batch():
    stu = StudentPolicy("diffusion", seed=0)
    g = gen_(1)
    s = torch.randn(4, STUDENT_OBS_DIM, dtype=torch.float64, generator=g)
    tok = torch.randn(4, 2, 11, dtype=torch.float64, generator=g)
    a = torch.rand(4, 11, dtype=torch.float64, generator=g) * 1.6 - 0.8
    j = torch.tensor([3, 7, 11, 16])
    eps = torch.randn(4, 11, dtype=torch.float64, generator=g)
    ab = stu.alpha_bar[j][:, None]
    noisy = torch.sqrt(ab) * a + torch.sqrt(1.0 - ab) * eps
    opt = torch.optim.Adam(stu.parameters(), lr=1e-3)
    loss = None
    for _ in range(500):
        loss = ((stu.predict_noise(s, tok, noisy, j) - eps) ** 2).mean()
        if loss.item() <= 1e-3:
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert loss.item() <= 1e-3


# --- token handling -------------------------------------------------------


@pytest.mark.parametrize("head", ["deterministic", "cvae", "diffusion"])
def test_token_permutation_invariance(head):
    stu = StudentPolicy(head, seed=2)
    batch = rand_student_batch(b=2, n_tokens=5, seed=4)
    s, tok = batch["s"], batch["tokens"]
    mask = torch.tensor([[True] * 5, [True, True, True, False, False]])
    perm = torch.tensor([3, 0, 4, 1, 2])

    def out(tokens, m):
        if head == "deterministic":
            return stu.deterministic_action(s, tokens, m)
        if head == "cvae":
            return torch.cat(stu.prior(s, tokens, m), dim=-1)
        j = torch.tensor([4, 9])
        noisy = batch["actions"]
        return stu.predict_noise(s, tokens, noisy, j, m)

    base = out(tok, mask)
    shuffled = out(tok[:, perm], mask[:, perm])
    assert (base - shuffled).abs().max().item() <= 1e-9


def test_masked_token_equals_dropped_token():
    stu = StudentPolicy("deterministic", seed=2)
    batch = rand_student_batch(b=2, n_tokens=3, seed=4)
    s, tok = batch["s"], batch["tokens"]
    mask = torch.tensor([[True, True, False]] * 2)
    with_pad = stu.deterministic_action(s, tok, mask)
    without = stu.deterministic_action(s, tok[:, :2])
    assert torch.allclose(with_pad, without, atol=1e-12)


def world_at(clip, t):
    pos = np.vstack([clip.body_pos[t], clip.obj_pos[t][None]])
    theta = np.concatenate([clip.body_theta[t], [clip.obj_theta[t]]])
    vel = np.vstack([clip.body_vel[t], clip.obj_vel[t][None]])
    omega = np.concatenate([clip.body_omega[t], [clip.obj_omega[t]]])
    return WorldState(pos, theta, vel, omega)


def test_pad_tokens_layout(clip):
    mask = sample_mask(RngStream(0, 1), "teleop")
    goal = build_versatile_goal(clip, 0, world_at(clip, 0), mask)
    tok, tmask = pad_tokens(goal)
    assert tok.shape == (8, 11) and tmask.shape == (8,)
    n = len(goal.matrix())
    assert n == 4
    assert tmask[:n].all() and not tmask[n:].any()
    assert np.allclose(tok[:n], goal.matrix())
    assert not tok[n:].any()


def test_pad_tokens_empty_goal(clip):
    goal = build_versatile_goal(clip, 0, world_at(clip, 0), GoalMask([]))
    tok, tmask = pad_tokens(goal)
    assert tok.shape == (8, 11) and not tmask.any() and not tok.any()


@pytest.mark.parametrize("head", ["deterministic", "cvae", "diffusion"])
def test_student_act_unconditioned(head):
    stu = StudentPolicy(head, seed=1)
    s = torch.randn(2, STUDENT_OBS_DIM, dtype=torch.float64,
                    generator=gen_(0))
    tok = torch.zeros(2, 0, 11, dtype=torch.float64)
    a = student_act(stu, s, tok, gen_(1))
    assert a.shape == (2, ACTION_DIM)
    assert torch.isfinite(a).all() and a.abs().max().item() <= 1.0


def test_diffusion_rollout_needs_generator():
    stu = StudentPolicy("diffusion", seed=1)
    batch = rand_student_batch(b=1)
    with pytest.raises(ValueError, match="generator"):
        student_act(stu, batch["s"], batch["tokens"], None)


# --- checkpoints ----------------------------------------------------------


def test_checkpoint_round_trip_byte_identical(tmp_path):
    for net in (TrackerPolicy(seed=5), StudentPolicy("diffusion", seed=5)):
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        checkpoint_save(net, str(p1), meta={"update": 3})
        loaded = checkpoint_load(str(p1))
        checkpoint_save(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_forward_identical(tmp_path):
    pol = TrackerPolicy(seed=6)
    x = torch.randn(3, OBS_DIM + GOAL_DIM, dtype=torch.float64,
                    generator=gen_(0))
    path = tmp_path / "t.ckpt"
    checkpoint_save(pol, str(path))   # snaps live params to file precision
    loaded = checkpoint_load(str(path))
    assert torch.equal(pol(x)[0], loaded(x)[0])
    assert torch.equal(pol.value(x), loaded.value(x))


def _rewrite_header(path, edit):
    blob = path.read_bytes()
    magic, header, payload = blob.split(b"\n", 2)
    doc = json.loads(header)
    edit(doc)
    path.write_bytes(magic + b"\n" + json.dumps(doc).encode() + b"\n"
                     + payload)


def test_checkpoint_shape_mismatch_names_layer(tmp_path):
    path = tmp_path / "t.ckpt"
    checkpoint_save(TrackerPolicy(seed=0), str(path))
    _rewrite_header(path, lambda d: d["arch"].update(act_dim=10))
    with pytest.raises(ValueError, match="log_std"):
        checkpoint_load(str(path))


def test_checkpoint_missing_param_named(tmp_path):
    path = tmp_path / "t.ckpt"
    checkpoint_save(TrackerPolicy(seed=0), str(path))
    _rewrite_header(path, lambda d: d["params"].pop())
    with pytest.raises(ValueError, match="missing parameter"):
        checkpoint_load(str(path))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "t.ckpt"
    path.write_bytes(b"some other format\n{}\n")
    with pytest.raises(ValueError, match="header"):
        checkpoint_load(str(path))


def test_checkpoint_payload_length_checked(tmp_path):
    path = tmp_path / "t.ckpt"
    checkpoint_save(TrackerPolicy(seed=0), str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="truncated"):
        checkpoint_load(str(path))
    path.write_bytes(blob + b"\x00" * 4)
    with pytest.raises(ValueError, match="trailing"):
        checkpoint_load(str(path))


# --- distillation ---------------------------------------------------------


@pytest.mark.parametrize("head", ["deterministic", "cvae", "diffusion"])
def test_head_loss_finite(head):
    stu = StudentPolicy(head, seed=3)
    loss = head_loss(stu, rand_student_batch(b=4), DistillConfig(), gen_(0))
    assert torch.isfinite(loss) and loss.item() >= 0.0


def test_distill_requires_teacher(tiny_dataset):
    stu = StudentPolicy("deterministic", seed=0)
    with pytest.raises(ValueError, match="teacher"):
        distill(None, stu, tiny_dataset, "dagger", DistillConfig(),
                RngStream(0, 1))
    with pytest.raises(ValueError, match="mode"):
        distill(TrackerPolicy(seed=0), stu, tiny_dataset, "online",
                DistillConfig(), RngStream(0, 1))


@pytest.mark.parametrize("mode", ["dagger", "offline"])
def test_distill_smoke(tiny_dataset, tmp_path, mode):
    cfg = DistillConfig(env_steps=96, collect_chunk=32, grad_per_collect=2,
                        batch=32, buffer_cap=256)
    stu = distill(TrackerPolicy(seed=0), StudentPolicy("deterministic",
                                                       seed=1),
                  tiny_dataset, mode, cfg, RngStream(0, 40),
                  out_dir=str(tmp_path))
    rows = stu.distill_history
    assert len(rows) == 6
    assert all(np.isfinite(r["loss"]) for r in rows)
    log = (tmp_path / f"distill_deterministic_{mode}.csv").read_text()
    assert log.splitlines()[0] == "step,loss,time_s"
    assert len(log.splitlines()) == 7


# --- tracker training loop ------------------------------------------------


def test_train_requires_clips():
    with pytest.raises(ValueError, match="train split"):
        train_tracker(Dataset(clips=[], train_ids=[], test_ids=[]),
                      TrainConfig(), RngStream(0, 1))


def test_train_deterministic_and_logged(tiny_dataset, tmp_path):
    cfg = TrainConfig(ppo=PpoConfig(n_envs=2, rollout=8), updates=2)
    h1 = train_tracker(tiny_dataset, cfg, RngStream(7, 1),
                       out_dir=str(tmp_path)).train_history
    h2 = train_tracker(tiny_dataset, cfg, RngStream(7, 1)).train_history

    def stable(h):
        return [{k: v for k, v in r.items() if k != "time_s"} for r in h]

    assert stable(h1) == stable(h2)
    assert len(h1) == 2
    log = (tmp_path / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("update,time_s,mean_reward")
    assert len(log) == 3
    assert (tmp_path / "tracker.ckpt").exists()
    loaded = checkpoint_load(str(tmp_path / "tracker.ckpt"))
    assert isinstance(loaded, TrackerPolicy)
