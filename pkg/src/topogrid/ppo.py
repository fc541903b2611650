"""Masked PPO: rollout collection, GAE, clipped losses and the training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .actions import TopoAction
from .chronics import Chronic, full_scenario, sample_scenario, slice_chronic
from .env import EnvConfig, GridEnv, OpponentConfig, ScenarioInfeasibleError, run_episode
from .grid import GridSpec
from .nn import autodiff as ad
from .nn.checkpoint import load_into, save_checkpoint
from .nn.optim import Adam
from .nn.policy import PolicyNetwork
from .observations import BUILDERS

log = logging.getLogger(__name__)


class NonFiniteBatchError(FloatingPointError):
    """A minibatch produced a non-finite ratio or loss."""


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    epochs: int = 4
    minibatch_size: int = 256
    rollout_length: int = 256
    n_workers: int = 8
    total_steps: int = 200_000
    learning_rate: float = 3e-4
    max_grad_norm: float | None = 0.5
    normalize_advantages: bool = True
    value_target: str = "td"          # "td": r + gamma V_old(s'); "gae": A + V_old
    horizon: int = 864
    eval_every: int = 10_000
    noop_prior: float = 0.0           # initial actor bias added to do-nothing logits
    reference_prior: float = 0.0      # initial actor bias added to busbar-1 / reconnect logits

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        if self.ent_coef < 0 or self.vf_coef < 0:
            raise ValueError("loss coefficients must be >= 0")
        if min(self.rollout_length, self.n_workers, self.minibatch_size) < 1 or self.epochs < 0:
            raise ValueError("rollout_length, n_workers and minibatch_size must be >= 1; epochs >= 0")
        if self.value_target not in ("td", "gae"):
            raise ValueError("value_target must be 'td' or 'gae'")
        if self.eval_every < 1 or self.total_steps < 0:
            raise ValueError("eval_every must be >= 1 and total_steps >= 0")


# ------------------------------------------------------------------- GAE

def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalised advantage estimates and returns.

    ``dones[t]`` marks that the episode ended after step ``t``; the next-state
    value is then taken as 0.  Arrays are ``[T]`` or ``[T, W]`` and
    ``last_value`` is the value of the state after the final step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(f"shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    last_value = np.broadcast_to(np.asarray(last_value, dtype=float), rewards.shape[1:])
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = last_value
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ------------------------------------------------------------------ buffer

@dataclass
class RolloutBuffer:
    obs: list                   # [T][W] featurized observations
    masks: np.ndarray           # [T, W, E, K]
    actions: np.ndarray         # [T, W, E]
    log_probs: np.ndarray       # [T, W]
    values: np.ndarray          # [T, W]
    rewards: np.ndarray         # [T, W] raw environment rewards
    dones: np.ndarray           # [T, W] episode ended after this step
    truncated: np.ndarray       # [T, W]
    bootstrap: np.ndarray       # [T, W] V_old(final obs) on truncation, else 0
    last_values: np.ndarray     # [W]
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.rewards.size)

    def finalize(self, config: PPOConfig) -> None:
        # a truncated episode is cut by the time limit, not by the dynamics:
        # fold gamma * V(final obs) into its last reward and close it
        r = self.rewards + config.gamma * self.bootstrap
        self.advantages, self.returns = compute_gae(
            r, self.values, self.dones, self.last_values, config.gamma, config.lam
        )
        next_values = np.concatenate([self.values[1:], self.last_values[None]], axis=0)
        td = r + config.gamma * next_values * (1.0 - self.dones)
        self.value_targets = td if config.value_target == "td" else self.returns
        if not np.all(np.isfinite(self.advantages)):
            raise NonFiniteBatchError("non-finite advantages in rollout")

    def flat(self) -> dict:
        t, w = self.rewards.shape
        return {
            "obs": [o for row in self.obs for o in row],
            "masks": self.masks.reshape(t * w, *self.masks.shape[2:]),
            "actions": self.actions.reshape(t * w, -1),
            "log_probs": self.log_probs.ravel(),
            "values": self.values.ravel(),
            "advantages": self.advantages.ravel(),
            "returns": self.returns.ravel(),
            "value_targets": self.value_targets.ravel(),
        }


@dataclass
class Minibatch:
    obs: list
    masks: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    @classmethod
    def select(cls, data: Mapping, idx: np.ndarray) -> Minibatch:
        return cls(
            obs=[data["obs"][i] for i in idx],
            masks=data["masks"][idx],
            actions=data["actions"][idx],
            log_probs=data["log_probs"][idx],
            advantages=data["advantages"][idx],
            value_targets=data["value_targets"][idx],
        )


# ------------------------------------------------------------------ losses

@dataclass
class LossTerms:
    l_clip: ad.Tensor
    l_vf: ad.Tensor
    entropy: ad.Tensor
    total: ad.Tensor      # L_clip - c1 L_VF + c2 S, to be maximised
    loss: ad.Tensor       # -total, minimised
    approx_kl: float
    clip_fraction: float

    def scalars(self) -> dict[str, float]:
        return {
            "l_clip": float(self.l_clip.data), "l_vf": float(self.l_vf.data),
            "entropy": float(self.entropy.data), "total": float(self.total.data),
            "approx_kl": self.approx_kl, "clip_fraction": self.clip_fraction,
        }


def ppo_losses(batch: Minibatch, policy: PolicyNetwork, config: PPOConfig) -> LossTerms:
    dist, values = policy.distribution(policy.collate(batch.obs), batch.masks)
    new_logp = dist.log_prob(batch.actions)
    log_ratio = new_logp - batch.log_probs
    ratio = ad.exp(log_ratio)
    if not np.all(np.isfinite(ratio.data)):
        bad = np.flatnonzero(~np.isfinite(ratio.data))
        raise NonFiniteBatchError(
            f"non-finite probability ratio at {len(bad)} transitions (first index {int(bad[0])}, "
            f"log-ratio {log_ratio.data[bad[0]]})"
        )
    adv = batch.advantages
    t1 = ratio * adv
    t2 = ad.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
    l_clip = ad.mean(ad.minimum(t1, t2))
    l_vf = ad.mean(ad.square(values - batch.value_targets))
    entropy = ad.mean(dist.entropy())
    total = l_clip - config.vf_coef * l_vf + config.ent_coef * entropy
    if not np.isfinite(total.data):
        raise NonFiniteBatchError(f"non-finite loss (L_clip {l_clip.data}, L_VF {l_vf.data}, S {entropy.data})")
    kl = float(np.mean((ratio.data - 1.0) - log_ratio.data))
    frac = float(np.mean(np.abs(ratio.data - 1.0) > config.clip_eps))
    return LossTerms(l_clip, l_vf, entropy, total, ad.neg(total), kl, frac)


# -------------------------------------------------------------- collection

class VecEnv:
    """Sequentially stepped environment workers with auto-reset.

    Each worker owns one :class:`GridEnv`; a finished episode is replaced
    immediately by one on a freshly sampled training scenario.
    """

    def __init__(self, spec: GridSpec, chronics: Mapping[int, Chronic], train_ids: Sequence[int],
                 env_config: EnvConfig, encoder: str, n_workers: int, horizon: int,
                 rng: np.random.Generator):
        self.spec = spec
        self.chronics = chronics
        self.train_ids = sorted(train_ids)
        self.horizon = horizon
        self.rng = rng
        self.envs = [GridEnv(spec, env_config, BUILDERS[encoder]) for _ in range(n_workers)]
        self.obs = [self._reset(env) for env in self.envs]
        self.ep_return = np.zeros(n_workers)
        self.ep_length = np.zeros(n_workers, dtype=np.int64)
        self.finished: list[tuple[float, int, bool]] = []

    def _reset(self, env: GridEnv):
        for _ in range(100):
            sc = sample_scenario(self.rng, self.train_ids, self.horizon)
            view = slice_chronic(self.chronics[sc.chronic_id], sc)
            try:
                return env.reset(view, seed=int(self.rng.integers(2**63)))
            except ScenarioInfeasibleError:
                continue
        raise ScenarioInfeasibleError("could not sample a feasible training scenario")

    def masks(self) -> np.ndarray:
        return np.stack([env.mask().valid for env in self.envs])


def collect_rollouts(vec: VecEnv, policy: PolicyNetwork, config: PPOConfig,
                     rng: np.random.Generator) -> RolloutBuffer:
    t_len, w = config.rollout_length, len(vec.envs)
    e = policy.layout.n_elements
    obs_rows: list = []
    masks = np.zeros((t_len, w, e, vec.envs[0].mask().valid.shape[1]), dtype=bool)
    actions = np.zeros((t_len, w, e), dtype=np.int64)
    logp = np.zeros((t_len, w))
    values = np.zeros((t_len, w))
    rewards = np.zeros((t_len, w))
    dones = np.zeros((t_len, w), dtype=bool)
    truncated = np.zeros((t_len, w), dtype=bool)
    bootstrap = np.zeros((t_len, w))

    for t in range(t_len):
        m = vec.masks()
        feats = [policy.featurize(o) for o in vec.obs]
        with ad.no_grad():
            dist, v = policy.distribution(policy.collate(feats), m)
            a = dist.sample(rng)
            lp = dist.log_prob(a).data
        obs_rows.append(feats)
        masks[t], actions[t], logp[t], values[t] = m, a, lp, v.data
        for k, env in enumerate(vec.envs):
            out = env.step(TopoAction(a[k]))
            if out.info["action_class"].value != "legal":
                raise RuntimeError(
                    f"worker {k}: masked action classified {out.info['action_class'].value} at step {out.info['step']}"
                )
            rewards[t, k] = out.reward
            vec.ep_return[k] += out.reward
            vec.ep_length[k] += 1
            if out.terminated or out.truncated:
                dones[t, k] = True
                truncated[t, k] = out.truncated
                if out.truncated:
                    bootstrap[t, k] = policy.value([out.observation])[0]
                vec.finished.append((float(vec.ep_return[k]), int(vec.ep_length[k]), bool(out.terminated)))
                vec.ep_return[k] = 0.0
                vec.ep_length[k] = 0
                vec.obs[k] = vec._reset(env)
            else:
                vec.obs[k] = out.observation

    last_values = policy.value(vec.obs)
    return RolloutBuffer(obs_rows, masks, actions, logp, values, rewards, dones, truncated, bootstrap, last_values)


def update(policy: PolicyNetwork, optimizer: Adam, buffer: RolloutBuffer, config: PPOConfig,
           rng: np.random.Generator) -> dict[str, float]:
    data = buffer.flat()
    n = buffer.size
    stats: list[dict[str, float]] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            mb = Minibatch.select(data, idx)
            if config.normalize_advantages and len(idx) > 1:
                a = mb.advantages
                mb.advantages = (a - a.mean()) / (a.std() + 1e-8)
            policy.zero_grad()
            terms = ppo_losses(mb, policy, config)
            ad.backward(terms.loss)
            grad_norm = optimizer.step()
            s = terms.scalars()
            s["grad_norm"] = grad_norm
            stats.append(s)
    if not stats:
        return {}
    return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}


# -------------------------------------------------------------- evaluation

def greedy_policy(policy: PolicyNetwork) -> Callable:
    def act(obs, mask):
        actions, _, _ = policy.act([obs], mask.valid[None])
        return TopoAction(actions[0])
    return act


@dataclass
class EvalRecord:
    step: int
    chronic: int
    opponent: bool
    length: int
    chronic_length: int
    reward_sum: float


def evaluate(policy: PolicyNetwork | Callable, spec: GridSpec, chronics: Mapping[int, Chronic], eval_ids: Sequence[int],
             env_config: EnvConfig, encoder: str, step: int, seed: int,
             modes: Sequence[bool] = (False, True), trace_dir: Path | None = None) -> list[EvalRecord]:
    """Deterministic (argmax) episodes over whole chronics, with and without opponent.

    ``policy`` may also be a plain ``act(obs, mask) -> TopoAction`` callable.
    """
    rows = []
    act = greedy_policy(policy) if isinstance(policy, PolicyNetwork) else policy
    for cid in eval_ids:
        chronic = chronics[cid]
        view = slice_chronic(chronic, full_scenario(chronic))
        for opponent in modes:
            cfg = _with_opponent(env_config, opponent)
            env = GridEnv(spec, cfg, BUILDERS[encoder])
            trace = run_episode(env, view, act, seed=seed + cid)
            if trace_dir is not None:
                trace.write(Path(trace_dir) / f"chronic{cid}_{'opp' if opponent else 'noopp'}.jsonl")
            rows.append(EvalRecord(step, cid, opponent, trace.length, chronic.length, trace.reward_sum))
    return rows


def _with_opponent(env_config: EnvConfig, enabled: bool) -> EnvConfig:
    opp = OpponentConfig(**{**asdict(env_config.opponent), "enabled": enabled})
    return EnvConfig(**{**asdict(env_config), "opponent": opp})


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    policy: PolicyNetwork
    steps: int
    history: list[EvalRecord] = field(default_factory=list)
    diverged: bool = False
    error: str = ""


def train(spec: GridSpec, chronics: Mapping[int, Chronic], config: PPOConfig, env_config: EnvConfig, *,
          encoder: str = "flat", train_ids: Sequence[int], eval_ids: Sequence[int] = (),
          train_opponent: bool = True, eval_modes: Sequence[bool] = (False, True),
          seed: int = 0, out_dir: str | Path | None = None, resume: str | Path | None = None) -> TrainResult:
    """Alternate collection and PPO updates; evaluate and checkpoint on schedule.

    With ``out_dir`` set, writes ``train_log.jsonl`` (one record per update),
    ``eval_log.jsonl`` (one record per eval chronic and opponent mode),
    ``ckpt_<step>.bin`` at every evaluation point and ``latest.bin`` with
    its optimizer state in ``latest.opt.npz``.
    """
    root = np.random.SeedSequence(seed)
    init_seq, sample_seq, env_seq, update_seq = root.spawn(4)
    policy = PolicyNetwork(spec, encoder, np.random.default_rng(init_seq), noop_prior=config.noop_prior,
                           reference_prior=config.reference_prior)
    optimizer = Adam(policy.parameters(), lr=config.learning_rate, max_grad_norm=config.max_grad_norm)
    out = Path(out_dir) if out_dir is not None else None
    step = 0
    if resume is not None:
        step = load_into(policy, resume)
        opt_path = Path(resume).with_suffix(".opt.npz")
        if opt_path.exists():
            with np.load(opt_path) as state:
                optimizer.load_state(dict(state))
        # continue the random streams past what the earlier run consumed
        root = np.random.SeedSequence([seed, step])
        init_seq, sample_seq, env_seq, update_seq = root.spawn(4)

    train_env = _with_opponent(env_config, train_opponent)
    vec = VecEnv(spec, chronics, train_ids, train_env, encoder, config.n_workers, config.horizon,
                 np.random.default_rng(env_seq))
    sample_rng = np.random.default_rng(sample_seq)
    update_rng = np.random.default_rng(update_seq)
    result = TrainResult(policy, step)
    per_rollout = config.rollout_length * config.n_workers
    next_eval = (step // config.eval_every + 1) * config.eval_every
    last_losses: dict[str, float] = {}

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        train_log = (out / "train_log.jsonl").open("a", encoding="utf-8")
        eval_log = (out / "eval_log.jsonl").open("a", encoding="utf-8")
    else:
        train_log = eval_log = None

    def checkpoint() -> None:
        if out is None:
            return
        save_checkpoint(out / f"ckpt_{step}.bin", policy.schema_hash(), step, policy.get_flat())
        save_checkpoint(out / "latest.bin", policy.schema_hash(), step, policy.get_flat())
        np.savez(out / "latest.opt.npz", **optimizer.state())

    def run_eval() -> None:
        rows = evaluate(policy, spec, chronics, eval_ids, env_config, encoder, step, seed, eval_modes)
        result.history.extend(rows)
        if eval_log is not None:
            for r in rows:
                eval_log.write(json.dumps({**asdict(r), "losses": last_losses}) + "\n")
            eval_log.flush()
        checkpoint()

    try:
        while step < config.total_steps:
            t0 = time.perf_counter()
            buffer = collect_rollouts(vec, policy, config, sample_rng)
            buffer.finalize(config)
            try:
                last_losses = update(policy, optimizer, buffer, config, update_rng)
            except NonFiniteBatchError as exc:
                result.diverged, result.error = True, str(exc)
                log.error("training diverged at step %d: %s", step, exc)
                break
            if not np.all(np.isfinite(policy.get_flat())):
                result.diverged, result.error = True, "non-finite parameters after update"
                break
            step += per_rollout
            result.steps = step
            finished = vec.finished
            vec.finished = []
            record = {
                "step": step,
                "episodes": len(finished),
                "mean_return": float(np.mean([f[0] for f in finished])) if finished else None,
                "mean_length": float(np.mean([f[1] for f in finished])) if finished else None,
                "blackouts": int(sum(f[2] for f in finished)),
                "mean_reward": float(buffer.rewards.mean()),
                "seconds": round(time.perf_counter() - t0, 3),
                **last_losses,
            }
            if train_log is not None:
                train_log.write(json.dumps(record) + "\n")
                train_log.flush()
            log.info("step %d: %s", step, record)
            if step >= next_eval or step >= config.total_steps:
                if eval_ids:
                    run_eval()
                else:
                    checkpoint()
                next_eval = (step // config.eval_every + 1) * config.eval_every
        if config.total_steps == 0 and eval_ids:
            run_eval()
        if result.diverged:
            checkpoint_path = out / "latest.bin" if out is not None else None
            if checkpoint_path is not None and not checkpoint_path.exists():
                checkpoint()
    finally:
        if train_log is not None:
            train_log.close()
            eval_log.close()
    return result
