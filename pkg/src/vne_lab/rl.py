"""Rewards, advantage estimators, PPO, and the two training loops.

The lower agent is trained alone with every VNR admitted. The upper agent is
trained afterwards on top of the frozen lower agent.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    LowerPolicy,
    PolicyConfig,
    UpperPolicy,
    UpperState,
    build_mask,
    lower_encode,
    physical_lower_features,
    rollout,
    upper_state,
    vnr_features,
)
from .autodiff import Adam, Tensor, masked_log_softmax, minimum, no_grad, where
from .config import EnvConfig
from .core import AllocationLedger, EmbeddingSolution, Status, finalize, place_node, rollback, route_new_links
from .sim import Solver, run_simulation

logger = logging.getLogger(__name__)

# training streams draw from their own seed range so they never overlap evaluation streams
TRAIN_SEED_BASE = 1_000_000


# --------------------------------------------------------------------------
# rewards
# --------------------------------------------------------------------------

@dataclass
class RewardConfig:
    w1: float = 0.1
    w2: float = 0.01
    basic_lower: bool = False   # ablation: rev/cost on success, 0 otherwise
    upper_scale: float = 0.01   # multiplies every upper reward before learning


def upper_reward(admitted: bool, embedded: bool, rev: float, cost: float, w1: float = 0.1) -> float:
    if not admitted:
        return 0.0
    if not embedded:
        return -w1
    return (rev / cost) * rev


def lower_step_reward(success: bool, final_success: bool, rev_t: float, cost_t: float, psi: float,
                      n_virtual: int, rev: float = 0.0, cost: float = 0.0, w2: float = 0.01,
                      basic: bool = False) -> float:
    """Reward of one placement step.

    ``rev_t``/``cost_t`` are the increments of this step; ``psi`` is the
    remaining-to-maximum ratio of the chosen node after deduction; ``rev`` and
    ``cost`` are the whole-VNR totals and only matter on final success.
    """
    if basic:
        return rev / cost if (success and final_success) else 0.0
    if not success:
        return -1.0 / n_virtual
    ratio = rev_t / cost_t if cost_t > 0 else 1.0
    delta = (ratio + w2 * psi) / n_virtual
    return delta + rev / cost if final_success else delta


# --------------------------------------------------------------------------
# advantages
# --------------------------------------------------------------------------

def _next_values(values, dones, last_value):
    values = np.asarray(values, dtype=np.float64)
    nxt = np.append(values[1:], last_value)
    nxt[np.asarray(dones, dtype=bool)] = 0.0
    return nxt


def advantage_discounted(rewards, values, dones, gamma: float = 0.99, last_value: float = 0.0):
    """One-step ``A_t = r_t + gamma V(s_{t+1}) - V(s_t)``; returns ``(advantages, value targets)``.

    ``dones[t]`` cuts the bootstrap after step ``t``; ``last_value`` bootstraps
    the final step when it is not terminal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    target = r + gamma * _next_values(values, dones, last_value)
    return target - np.asarray(values, dtype=np.float64), target


def advantage_average_reward(rewards, values, dones=None, last_value: float = 0.0):
    """``A_t = r_t - rho + V(s_{t+1}) - V(s_t)`` with ``rho`` the window's mean reward."""
    r = np.asarray(rewards, dtype=np.float64)
    if dones is None:
        dones = np.zeros(len(r), dtype=bool)
        dones[-1:] = True
    rho = r.mean() if len(r) else 0.0
    target = r - rho + _next_values(values, dones, last_value)
    return target - np.asarray(values, dtype=np.float64), target


# --------------------------------------------------------------------------
# PPO
# --------------------------------------------------------------------------

@dataclass
class PpoConfig:
    clip: float = 0.2
    actor_lr: float = 1e-3
    critic_lr: float = 5e-4
    batch_size: int = 256
    gamma: float = 0.99
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs: int = 4
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def ppo_loss(new_logp: Tensor, old_logp, advantages, values: Tensor, targets, entropy: Tensor,
             cfg: PpoConfig):
    """Clipped surrogate + weighted value MSE - weighted entropy; returns ``(loss, stats)``."""
    adv = np.asarray(advantages, dtype=np.float64)
    ratio = (new_logp - np.asarray(old_logp, dtype=np.float64)).exp()
    surrogate = minimum(ratio * adv, ratio.clip(1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    policy_loss = -surrogate.mean()
    value_loss = ((values - np.asarray(targets, dtype=np.float64)) ** 2).mean()
    ent = entropy.mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    stats = {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(), "entropy": ent.item(),
             "clip_frac": float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip))}
    return loss, stats


def _entropy(logp: Tensor, mask=None) -> Tensor:
    safe = logp if mask is None else where(mask, logp, 0.0)
    return -(logp.exp() * safe).sum(axis=-1)


@dataclass
class Trajectory:
    """Aligned per-step records collected between two PPO updates."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def append(self, state, action, logp, reward, value, done) -> None:
        if not np.isfinite(logp):
            raise ValueError("log-probability of a taken action must be finite")
        self.states.append(state)
        self.actions.append(int(action))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.states)

    def clear(self) -> None:
        for f in (self.states, self.actions, self.logps, self.rewards, self.values, self.dones):
            f.clear()


def make_optimizer(policy, cfg: PpoConfig) -> Adam:
    actor, critic = policy.actor_critic_params()
    return Adam([(actor, cfg.actor_lr), (critic, cfg.critic_lr)], max_grad_norm=cfg.max_grad_norm)


def ppo_update(evaluate_fn, opt: Adam, old_logp, advantages, targets, cfg: PpoConfig, rng) -> dict:
    """Run ``cfg.epochs`` passes of clipped-PPO minibatch updates.

    ``evaluate_fn(idx)`` recomputes ``(log_prob_of_action, value, entropy)``
    for the given sample indices under the current parameters.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(adv)
    n_mb = max(1, n // cfg.batch_size)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        for idx in np.array_split(rng.permutation(n), n_mb):
            opt.zero_grad()
            logp, value, ent = evaluate_fn(idx)
            loss, stats = ppo_loss(logp, old_logp[idx], adv[idx], value, targets[idx], ent, cfg)
            loss.backward()
            opt.step()
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


# --------------------------------------------------------------------------
# lower agent
# --------------------------------------------------------------------------

@dataclass
class LowerStep:
    slot: int               # index into the trainer's VNR feature table
    v: int
    p_node: np.ndarray
    p_link: np.ndarray
    remaining: float
    hidden: np.ndarray
    mask: np.ndarray


def lower_evaluate(policy: LowerPolicy, feats: dict, links: np.ndarray, steps: list[LowerStep], actions):
    """Batched ``(log_prob_of_action, value, entropy)`` for recorded lower steps."""
    slots = sorted({s.slot for s in steps})
    local = {s: i for i, s in enumerate(slots)}
    nf, vl, lf, orders = zip(*(feats[s] for s in slots))
    enc = policy.encode(list(nf), list(vl), list(lf), list(orders))
    hv = enc[(np.array([local[s.slot] for s in steps]), np.array([s.v for s in steps]))]
    masks = np.stack([s.mask for s in steps])
    logp, value, _ = policy.decode(np.stack([s.p_node for s in steps]), np.stack([s.p_link for s in steps]),
                                   links, hv, np.array([[s.remaining] for s in steps]),
                                   np.stack([s.hidden for s in steps]), masks)
    chosen = logp[(np.arange(len(steps)), np.asarray(actions))]
    return chosen, value, _entropy(logp, masks)


class LowerTrainer(Solver):
    """Admits everything, samples placements from the lower policy and learns online."""

    name = "lower-train"

    def __init__(self, policy: LowerPolicy, ppo: PpoConfig, rewards: RewardConfig, scale: float, rng):
        self.policy = policy
        self.ppo = ppo
        self.rewards = rewards
        self.scale = scale
        self.rng = rng
        self.opt = make_optimizer(policy, ppo)
        self.traj = Trajectory()
        self.feats: dict[int, tuple] = {}
        self.links = None
        self.episode_reward = 0.0
        self.updates = 0
        self.last_stats: dict = {}

    def reset(self, net):
        self.links = net.links
        self.episode_reward = 0.0

    def allocate(self, net, vnr):
        slot = len(self.feats)
        self.feats[slot] = (*vnr_features(vnr, self.scale), vnr.node_order)
        enc = lower_encode(self.policy, vnr, self.scale)
        sol = EmbeddingSolution(vnr.id)
        ledger = AllocationLedger()
        hidden = self.policy.initial_hidden()
        n = vnr.num_nodes
        rc = self.rewards
        for step in range(n):
            v = int(vnr.node_order[step])
            node_f, link_f = physical_lower_features(net, vnr, sol, v, self.scale)
            mask = build_mask(net, vnr.node_demand[v], sol.node_map.values())
            if not mask.any():
                # nothing to choose, so no transition; the previous one becomes terminal
                if len(self.traj) and not self.traj.dones[-1]:
                    self.traj.dones[-1] = True
                rollback(net, ledger)
                return EmbeddingSolution(vnr.id, status=Status.FAILED)
            remaining = (n - step) / n
            with no_grad():
                logp, value, h = self.policy.decode(node_f[None], link_f[None], net.links, Tensor(enc[v][None]),
                                                    np.array([[remaining]]), hidden[None], mask[None])
            p = np.exp(logp.data[0])
            a = int(self.rng.choice(len(p), p=p / p.sum()))
            placed = place_node(net, sol, vnr, v, a, ledger)
            routed = route_new_links(net, sol, vnr, v, ledger) if placed else None
            ok = routed is not None
            final = ok and step == n - 1
            if ok:
                d = float(vnr.node_demand[v])
                rev_t = d + sum(float(vnr.link_demand[k]) for k in routed)
                cost_t = d + sum(len(sol.link_map[k]) * float(vnr.link_demand[k]) for k in routed)
                psi = net.node_available[a] / net.node_capacity[a]
                if final:
                    finalize(sol, vnr)
                r = lower_step_reward(True, final, rev_t, cost_t, psi, n, sol.revenue, sol.cost,
                                      rc.w2, rc.basic_lower)
            else:
                r = lower_step_reward(False, False, 0.0, 0.0, 0.0, n, w2=rc.w2, basic=rc.basic_lower)
            self.traj.append(LowerStep(slot, v, node_f, link_f, remaining, hidden, mask), a,
                             logp.data[0, a], r, value.data[0], final or not ok)
            self.episode_reward += r
            if not ok:
                rollback(net, ledger)
                return EmbeddingSolution(vnr.id, status=Status.FAILED)
            hidden = h.data[0]
        return sol

    def observe(self, vnr, admitted, sol):
        if len(self.traj) >= self.ppo.batch_size:
            self.update()

    def update(self) -> None:
        t = self.traj
        if not t.dones[-1]:
            t.dones[-1] = True
        adv, target = advantage_discounted(t.rewards, t.values, t.dones, self.ppo.gamma)
        steps, actions = list(t.states), np.array(t.actions)

        def evaluate_fn(idx):
            return lower_evaluate(self.policy, self.feats, self.links, [steps[i] for i in idx], actions[idx])

        self.last_stats = ppo_update(evaluate_fn, self.opt, t.logps, adv, target, self.ppo, self.rng)
        self.updates += 1
        t.clear()
        self.feats.clear()


CURVE_FIELDS = ["episode", "reward", "accepted", "total", "acceptance", "mean_rc", "updates",
                "policy_loss", "value_loss", "entropy", "seconds"]


def _write_curve(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def train_lower(env: EnvConfig, episodes: int, policy_cfg: PolicyConfig | None = None,
                ppo: PpoConfig | None = None, rewards: RewardConfig | None = None, seed: int = 0,
                curve_path=None, policy: LowerPolicy | None = None):
    """Train the lower agent for ``episodes`` simulated VNR streams.

    The substrate is ``env.substrate(seed)`` every episode; each episode
    draws a fresh stream. Returns ``(policy, curve_rows)``.
    """
    policy_cfg = policy_cfg or PolicyConfig(seed=seed)
    ppo = ppo or PpoConfig()
    rewards = rewards or RewardConfig()
    policy = policy or LowerPolicy(policy_cfg)
    base = env.substrate(seed)
    trainer = LowerTrainer(policy, ppo, rewards, base.max_capacity, np.random.default_rng(seed))
    rows = []
    for ep in range(episodes):
        t0 = time.perf_counter()
        vnrs = env.workload(TRAIN_SEED_BASE + 1000 * seed + ep)
        m = run_simulation(base.copy(), vnrs, trainer)
        rows.append({"episode": ep, "reward": trainer.episode_reward, "accepted": m.accepted, "total": m.total,
                     "acceptance": m.accepted / m.total, "mean_rc": m.mean_rc, "updates": trainer.updates,
                     **trainer.last_stats, "seconds": time.perf_counter() - t0})
        logger.info("lower episode %d reward %.3f acceptance %.3f rc %.3f", ep, trainer.episode_reward,
                    m.accepted / m.total, m.mean_rc)
        if curve_path is not None:
            _write_curve(curve_path, rows)
    return policy, rows


# --------------------------------------------------------------------------
# upper agent
# --------------------------------------------------------------------------

@dataclass
class UpperStep:
    state: UpperState
    hidden: np.ndarray


def upper_evaluate(policy: UpperPolicy, steps: list[UpperStep], actions):
    logits, value, _ = policy([s.state for s in steps], np.stack([s.hidden for s in steps]))
    logp = masked_log_softmax(logits, None)
    chosen = logp[(np.arange(len(steps)), np.asarray(actions))]
    return chosen, value, _entropy(logp)


class UpperTrainer(Solver):
    """Samples admissions from the upper policy; the frozen lower policy allocates greedily."""

    name = "upper-train"

    def __init__(self, upper: UpperPolicy, lower: LowerPolicy, ppo: PpoConfig, rewards: RewardConfig,
                 mean_lifetime: float, rng):
        self.upper = upper
        self.lower = lower
        self.ppo = ppo
        self.rewards = rewards
        self.mean_lifetime = mean_lifetime
        self.rng = rng
        self.opt = make_optimizer(upper, ppo)
        self.window = Trajectory()
        self.buffer: tuple[list, list, list, list, list] = ([], [], [], [], [])
        self.hidden = upper.initial_hidden()
        self.pending = None
        self.episode_reward = 0.0
        self.updates = 0
        self.last_stats: dict = {}

    def reset(self, net):
        self.hidden = self.upper.initial_hidden()
        self.window.clear()
        self.episode_reward = 0.0

    def admit(self, net, vnr):
        state = upper_state(net, vnr, self.mean_lifetime)
        with no_grad():
            logits, value, h = self.upper([state], self.hidden[None])
        z = logits.data[0] - logits.data[0].max()
        logp = z - np.log(np.exp(z).sum())
        a = int(self.rng.choice(2, p=np.exp(logp) / np.exp(logp).sum()))
        self.pending = (UpperStep(state, self.hidden), a, logp[a], float(value.data[0]))
        self.hidden = h.data[0]
        return a == 1

    def allocate(self, net, vnr):
        return rollout(self.lower, vnr, net, "greedy")[0]

    def observe(self, vnr, admitted, sol):
        step, a, logp, value = self.pending
        embedded = sol is not None and sol.status == Status.EMBEDDED
        r = upper_reward(admitted, embedded, sol.revenue if embedded else 0.0,
                         sol.cost if embedded else 0.0, self.rewards.w1)
        self.episode_reward += r
        self.window.append(step, a, logp, r * self.rewards.upper_scale, value, False)

    def end_simulation(self) -> None:
        """Close the window (terminal bootstrap 0) and update once enough samples are buffered."""
        w = self.window
        if not len(w):
            return
        adv, target = advantage_average_reward(w.rewards, w.values)
        for buf, vals in zip(self.buffer, (w.states, w.actions, w.logps, list(adv), list(target))):
            buf.extend(vals)
        w.clear()
        if len(self.buffer[0]) >= self.ppo.batch_size:
            self.update()

    def update(self) -> None:
        steps, actions, logps, adv, target = self.buffer
        actions_arr = np.array(actions)

        def evaluate_fn(idx):
            return upper_evaluate(self.upper, [steps[i] for i in idx], actions_arr[idx])

        self.last_stats = ppo_update(evaluate_fn, self.opt, logps, adv, target, self.ppo, self.rng)
        self.updates += 1
        for buf in self.buffer:
            buf.clear()


class FreezeError(RuntimeError):
    pass


def train_upper(lower: LowerPolicy, env: EnvConfig, iterations: int, policy_cfg: PolicyConfig | None = None,
                ppo: PpoConfig | None = None, rewards: RewardConfig | None = None, seed: int = 0,
                curve_path=None, upper: UpperPolicy | None = None):
    """Train the upper agent over ``iterations`` full simulations with ``lower`` frozen.

    Raises :class:`FreezeError` if the lower parameters change. Returns
    ``(upper, curve_rows)``.
    """
    policy_cfg = policy_cfg or PolicyConfig(seed=seed)
    ppo = ppo or PpoConfig()
    rewards = rewards or RewardConfig()
    upper = upper or UpperPolicy(policy_cfg)
    frozen = lower.param_hash()
    trainer = UpperTrainer(upper, lower, ppo, rewards, env.mean_lifetime, np.random.default_rng(seed))
    base = env.substrate(seed)
    rows = []
    for it in range(iterations):
        t0 = time.perf_counter()
        vnrs = env.workload(TRAIN_SEED_BASE + 1000 * seed + 500 + it)
        m = run_simulation(base.copy(), vnrs, trainer)
        trainer.end_simulation()
        rows.append({"episode": it, "reward": trainer.episode_reward, "accepted": m.accepted, "total": m.total,
                     "acceptance": m.accepted / m.total, "mean_rc": m.mean_rc, "updates": trainer.updates,
                     **trainer.last_stats, "seconds": time.perf_counter() - t0})
        logger.info("upper iteration %d reward %.1f acceptance %.3f", it, trainer.episode_reward,
                    m.accepted / m.total)
        if curve_path is not None:
            _write_curve(curve_path, rows)
    if lower.param_hash() != frozen:
        raise FreezeError("lower-level parameters changed while training the upper agent")
    return upper, rows


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def evaluate(lower_path, upper_path, env: EnvConfig, seeds, beam_width: int = 3, admission: str = "policy",
             pricing=(1.0, 0.0), out_dir=None, threads: int | None = None):
    """Greedy-inference run of saved checkpoints; returns ``(per_seed_rows, aggregate)``."""
    from .experiment import ExperimentConfig, SolverSpec, run_experiment

    spec = SolverSpec("hrl-acra", lower=str(lower_path), upper=str(upper_path) if upper_path else None,
                      beam_width=beam_width, admission=admission)
    cfg = ExperimentConfig(env=env, solver=spec, pricing=tuple(pricing), seeds=list(seeds), out_dir=out_dir)
    return run_experiment(cfg, threads=threads)


__all__ = [
    "RewardConfig", "upper_reward", "lower_step_reward", "advantage_discounted", "advantage_average_reward",
    "PpoConfig", "ppo_loss", "ppo_update", "Trajectory", "LowerTrainer", "UpperTrainer", "train_lower",
    "train_upper", "evaluate", "FreezeError", "make_optimizer", "lower_evaluate", "upper_evaluate",
]

