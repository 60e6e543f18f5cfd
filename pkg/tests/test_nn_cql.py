import math

import numpy as np
import pytest

from wwrouter.cql import (
    STOP_ACTION_DIFF,
    STOP_CONVERGED,
    STOP_EXPLOSION,
    Batch,
    CQLConfig,
    CriticNoise,
    Nets,
    TrainingError,
    action_diff,
    action_diff_triggered,
    actor_loss_and_grad,
    converged_triggered,
    critic_loss_and_grad,
    explosion_triggered,
    initial_state_value,
    train,
    write_metrics,
)
from wwrouter.datagen import Transition, TransitionDataset
from wwrouter.features import STATE_DIM
from wwrouter.nn import MLP, Actor, Critic, polyak_update, squashed_log_prob

SMALL_S = 3
ACT = 4


def _small(rng, hidden=(6, 5)):
    actor = Actor.init(rng, SMALL_S, ACT, hidden)
    critics = [Critic.init(rng, SMALL_S, ACT, hidden) for _ in range(2)]
    targets = [Critic.init(rng, SMALL_S, ACT, hidden) for _ in range(2)]
    return actor, Nets(critics, targets)


def _batch(rng, B):
    return Batch(
        rng.normal(size=(B, SMALL_S)),
        rng.uniform(0.05, 0.95, size=(B, ACT)),
        rng.uniform(-1, 1, size=B),
        rng.normal(size=(B, SMALL_S)),
        (rng.random(B) < 0.3).astype(float),
    )


def _fd_grad(f, params, eps=1e-6):
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = f()
            p[i] = old - eps
            down = f()
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def _rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_critic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    actor, nets = _small(rng)
    batch = _batch(rng, 5)
    cfg = CQLConfig(n_sampled_actions=3)
    noise = CriticNoise.draw(rng, 5, 3)
    _, _, grads = critic_loss_and_grad(batch, nets, actor, cfg, noise)
    for k in range(2):
        fd = _fd_grad(lambda: critic_loss_and_grad(batch, nets, actor, cfg, noise)[0], nets.critics[k].params())
        assert _rel_err(grads[k], fd) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_actor_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    actor, nets = _small(rng)
    batch = _batch(rng, 4)
    cfg = CQLConfig()
    noise = rng.normal(size=(4, ACT))
    _, grads = actor_loss_and_grad(batch, nets, actor, cfg, noise)
    fd = _fd_grad(lambda: actor_loss_and_grad(batch, nets, actor, cfg, noise)[0], actor.params())
    assert _rel_err(grads, fd) < 1e-4


def test_mlp_backward_matches_fd(rng):
    m = MLP.init(rng, [3, 4, 2])
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 2))
    _, cache = m.forward(x)
    grads, _ = m.backward(cache, w)
    fd = _fd_grad(lambda: float(np.sum(m(x) * w)), m.params())
    assert _rel_err(grads, fd) < 1e-6


def test_alpha_zero_is_plain_bellman(rng):
    actor, nets = _small(rng)
    batch = _batch(rng, 6)
    noise = CriticNoise.draw(rng, 6, 4)
    cfg = CQLConfig(alpha=0.0, n_sampled_actions=4)
    loss, pen, _ = critic_loss_and_grad(batch, nets, actor, cfg, noise)
    assert pen == 0.0
    nxt = actor.sample(batch.s2, noise.next_noise)
    qn = np.minimum(nets.targets[0](batch.s2, nxt.action), nets.targets[1](batch.s2, nxt.action))
    y = batch.r + cfg.gamma * (1 - batch.done) * (qn - cfg.temperature * nxt.log_prob)
    expect = sum(0.5 * np.mean((c(batch.s, batch.a) - y) ** 2) for c in nets.critics)
    assert loss == pytest.approx(expect, rel=1e-12)


def test_singleton_sample_set_has_zero_penalty(rng):
    actor, nets = _small(rng)
    batch = _batch(rng, 6)
    noise = CriticNoise(rng.normal(size=(6, ACT)), np.zeros((0, 6, ACT)), np.zeros((0, 6, ACT)))
    _, pen, _ = critic_loss_and_grad(batch, nets, actor, CQLConfig(), noise)
    assert pen == pytest.approx(0.0, abs=1e-12)


def _scalar_mlp(w1, b1, w2, b2, relu_last=False):
    return MLP([np.array([[w] for w in w1]).reshape(len(w1), 1), np.array([[w2]])],
               [np.array([b1]), np.array([b2])], relu_last)


def test_scalar_hand_evaluation():
    # 1-d state, 1-d action, one hidden unit everywhere
    c1 = Critic(MLP([np.array([[0.5], [-0.3]]), np.array([[1.2]])], [np.array([0.1]), np.array([0.05])]), 1)
    c2 = Critic(MLP([np.array([[0.4], [0.2]]), np.array([[0.9]])], [np.array([0.2]), np.array([-0.1])]), 1)
    t1 = Critic(MLP([np.array([[0.3], [0.1]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])]), 1)
    t2 = Critic(MLP([np.array([[0.2], [0.4]]), np.array([[1.1]])], [np.array([0.1]), np.array([0.0])]), 1)
    actor = Actor(
        MLP([np.array([[0.7]])], [np.array([0.1])], relu_last=True),
        MLP([np.array([[0.5]])], [np.array([-0.2])]),
        MLP([np.array([[0.3]])], [np.array([-1.0])]),
    )
    nets = Nets([c1, c2], [t1, t2])
    s, a, r, s2, done = 1.5, 0.3, 0.4, -0.5, 0.0
    batch = Batch(np.array([[s]]), np.array([[a]]), np.array([r]), np.array([[s2]]), np.array([done]))
    n_next, u, n_pol = 0.25, 0.8, -0.6
    noise = CriticNoise(np.array([[n_next]]), np.array([[[u]]]), np.array([[[n_pol]]]))
    cfg = CQLConfig(alpha=0.8, n_sampled_actions=1, gamma=0.99)

    relu = lambda x: max(x, 0.0)

    def q(params, s, a):
        (ws, wa, b1), (w2, b2) = params
        return w2 * relu(ws * s + wa * a + b1) + b2

    P1 = ((0.5, -0.3, 0.1), (1.2, 0.05))
    P2 = ((0.4, 0.2, 0.2), (0.9, -0.1))
    T1 = ((0.3, 0.1, 0.0), (1.0, 0.0))
    T2 = ((0.2, 0.4, 0.1), (1.1, 0.0))

    def act(s, n):
        h = relu(0.7 * s + 0.1)
        mean = 0.5 * h - 0.2
        ls = min(max(0.3 * h - 1.0, -5.0), 2.0)
        z = mean + math.exp(ls) * n
        y = math.tanh(z)
        logp = -0.5 * n * n - ls - 0.5 * math.log(2 * math.pi) - math.log(1 - y * y) + math.log(2)
        return (y + 1) / 2, logp

    a2, lp2 = act(s2, n_next)
    y = r + 0.99 * (1 - done) * (min(q(T1, s2, a2), q(T2, s2, a2)) - cfg.temperature * lp2)
    ap, lpp = act(s, n_pol)
    total = 0.0
    pens = []
    for P in (P1, P2):
        qd = q(P, s, a)
        terms = [qd, q(P, s, u), q(P, s, ap) - lpp]
        lse = math.log(sum(math.exp(t) for t in terms))
        pens.append(0.8 * (lse - qd))
        total += 0.5 * (qd - y) ** 2 + pens[-1]
    loss, pen, _ = critic_loss_and_grad(batch, nets, actor, cfg, noise)
    assert loss == pytest.approx(total, rel=1e-12)
    assert pen == pytest.approx(np.mean(pens), rel=1e-12)
    v = initial_state_value(np.array([[s]]), nets, actor)
    am = (math.tanh(0.5 * relu(0.7 * s + 0.1) - 0.2) + 1) / 2
    assert v == pytest.approx(min(q(P1, s, am), q(P2, s, am)), rel=1e-12)


def test_squashed_log_prob_closed_form():
    mean = np.zeros((1, 4))
    log_std = np.full((1, 4), -0.5)
    noise = np.zeros((1, 4))
    lp = squashed_log_prob(mean, noise, log_std)
    # z = 0: tanh'(0) = 1, so density of a=(y+1)/2 is 2 * N(0; 0, std)
    expect = 4 * (-(-0.5) * 1 - 0.5 * math.log(2 * math.pi) + math.log(2))
    assert lp[0] == pytest.approx(expect, rel=1e-12)


def test_frozen_zero_critic_actor_loss(rng):
    actor, nets = _small(rng)
    for c in nets.critics:
        for p in c.params():
            p[...] = 0.0
    batch = _batch(rng, 5)
    noise = rng.normal(size=(5, ACT))
    loss, _ = actor_loss_and_grad(batch, nets, actor, CQLConfig(), noise)
    smp = actor.sample(batch.s, noise)
    assert loss == pytest.approx(CQLConfig().temperature * smp.log_prob.mean(), rel=1e-12)


def test_actions_in_unit_box(rng):
    actor = Actor.init(rng, SMALL_S, ACT)
    s = rng.normal(size=(200, SMALL_S)) * 50
    a = actor.sample(s, rng.normal(size=(200, ACT)) * 5).action
    assert np.all((a >= 0) & (a <= 1))
    m = actor.mean_action(s)
    assert np.all((m >= 0) & (m <= 1))


def test_polyak():
    t = [np.zeros(3)]
    polyak_update(t, [np.ones(3)], 1.97555e-3)
    assert t[0][0] == pytest.approx(1.97555e-3, rel=1e-15)
    t = [np.arange(3.0)]
    polyak_update(t, [np.ones(3)], 0.0)
    assert t[0].tolist() == [0.0, 1.0, 2.0]
    polyak_update(t, [np.ones(3)], 1.0)
    assert t[0].tolist() == [1.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        polyak_update([np.zeros(2)], [np.zeros(3)], 0.5)


def test_polyak_linearity(rng):
    tau = 0.3
    T, O = rng.normal(size=10), rng.normal(size=10)
    twice = [T.copy()]
    polyak_update(twice, [O], tau)
    polyak_update(twice, [O], tau)
    once = [T.copy()]
    polyak_update(once, [O], 2 * tau - tau * tau)
    assert np.max(np.abs(twice[0] - once[0])) < 1e-12


def test_action_diff_examples(rng):
    actor = Actor.init(rng, SMALL_S, ACT)
    s = rng.normal(size=(10, SMALL_S))
    m = actor.mean_action(s)
    assert action_diff(s, m, actor) == 0.0
    # push the actor to the corner and put data in the opposite one
    actor.mean_head.weights[0][...] = 0.0
    actor.mean_head.biases[0][...] = 100.0
    assert action_diff(s, np.zeros((10, ACT)), actor) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        action_diff(s[:0], m[:0], actor)


def test_initial_state_value_zero_critics(rng):
    actor, nets = _small(rng)
    for c in nets.critics:
        for p in c.params():
            p[...] = 0.0
    assert initial_state_value(rng.normal(size=(3, SMALL_S)), nets, actor) == 0.0
    with pytest.raises(ValueError):
        initial_state_value(np.zeros((0, SMALL_S)), nets, actor)


def test_stop_rules():
    assert explosion_triggered([1.0, 150.0])
    assert not explosion_triggered([1.0, 99.0])
    assert not explosion_triggered([150.0])
    assert explosion_triggered([5.0, 1.0, 2.0, 101.0])
    assert converged_triggered([5.0, 5.001, 5.002])
    assert not converged_triggered([5.0, 5.001])
    assert not converged_triggered([1.0, 1.5, 0.5])
    assert action_diff_triggered(1.01) and not action_diff_triggered(1.0)


# -- training on synthetic datasets -------------------------------------------------


def bandit_dataset(seed: int, n: int = 512) -> TransitionDataset:
    """One state, actions clustered at 0.2, reward 1, every transition terminal."""
    rng = np.random.default_rng(seed)
    state = np.linspace(0.0, 1.0, STATE_DIM)
    ts = []
    for i in range(n):
        a = np.clip(0.2 + 0.02 * rng.normal(size=4), 0, 1)
        ts.append(Transition(state.copy(), a, 1.0, state.copy(), True, "bandit", i, 0))
    return TransitionDataset.assemble(ts, {"kind": "bandit"})


def _q_gap(result, seed):
    rng = np.random.default_rng(1000 + seed)
    ds = bandit_dataset(seed)
    S, A, *_ = ds.arrays()
    s = ds.scaler.transform(S)
    q_data = result.nets.q_min(s, A).mean()
    ood = rng.uniform(0.6, 1.0, size=A.shape)
    return q_data - result.nets.q_min(s, ood).mean()


def test_conservatism_widens_gap():
    gaps = {}
    for alpha in (0.0, 0.8):
        vals = []
        for seed in range(5):
            cfg = CQLConfig(alpha=alpha, max_epochs=20, min_epochs=20, seed=seed)
            vals.append(_q_gap(train(bandit_dataset(seed), cfg), seed))
        gaps[alpha] = vals
    assert all(g8 > g0 for g8, g0 in zip(gaps[0.8], gaps[0.0]))
    assert np.mean(gaps[0.8]) > np.mean(gaps[0.0])


def test_penalty_nonnegative_every_step():
    res = train(bandit_dataset(0), CQLConfig(max_epochs=5, min_epochs=5))
    assert len(res.step_penalties) == 5 * 4
    assert min(res.step_penalties) >= 0.0


def test_too_small_dataset():
    with pytest.raises(TrainingError):
        train(bandit_dataset(0, n=10), CQLConfig())


def test_training_deterministic(tmp_path):
    a = train(bandit_dataset(1), CQLConfig(max_epochs=4, min_epochs=4))
    b = train(bandit_dataset(1), CQLConfig(max_epochs=4, min_epochs=4))
    assert a.bundle.dumps() == b.bundle.dumps()
    write_metrics(a.history, tmp_path / "a.tsv")
    write_metrics(b.history, tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    header = (tmp_path / "a.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["epoch", "critic_loss", "actor_loss", "conservative_penalty",
                      "initial_state_value", "action_diff", "stop_reason"]


def test_convergence_stop_fires():
    res = train(bandit_dataset(2), CQLConfig(max_epochs=50, min_epochs=3))
    assert res.stop_reason == STOP_CONVERGED
    assert res.history[-1].stop_reason == STOP_CONVERGED


def test_action_diff_stop_returns_previous_bundle():
    # data at the far corner from where a fresh actor starts, and a tight limit
    ds = bandit_dataset(3)
    for t in ds.transitions:
        t.action[...] = 1.0
    res = train(ds, CQLConfig(max_epochs=5, min_epochs=5, action_diff_limit=0.01))
    assert res.stop_reason == STOP_ACTION_DIFF
    assert len(res.history) == 1


def test_explosion_stop(monkeypatch):
    import wwrouter.cql as cq

    real = cq.critic_loss_and_grad
    calls = {"n": 0}

    def fake(batch, nets, actor, cfg, noise):
        loss, pen, grads = real(batch, nets, actor, cfg, noise)
        calls["n"] += 1
        # epochs have 4 steps; blow the loss up from the third epoch on
        return (loss * 1e4 if calls["n"] > 8 else loss), pen, grads

    monkeypatch.setattr(cq, "critic_loss_and_grad", fake)
    res = cq.train(bandit_dataset(4), CQLConfig(max_epochs=10, min_epochs=10))
    assert res.stop_reason == STOP_EXPLOSION
    assert len(res.history) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        CQLConfig(temperature_lr=0.1)
    with pytest.raises(ValueError):
        CQLConfig(optimizer="rmsprop")
    assert CQLConfig.from_dict(CQLConfig().to_dict()) == CQLConfig()


def test_adam_option_runs():
    res = train(bandit_dataset(5), CQLConfig(max_epochs=2, min_epochs=2, optimizer="adam"))
    assert len(res.history) == 2
