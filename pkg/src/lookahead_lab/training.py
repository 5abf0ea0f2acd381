"""Three-stage agent training: horizon pseudo-labeling, joint warm-up
imitation, and online advantage actor-critic with shaped rewards, preceded by
a behavior-cloning warm start.

All losses are over linear-softmax heads, so gradients are closed-form and
checkable against finite differences. Optimization is deliberately plain:
full-batch gradient descent with a fixed step and global-norm clipping, so a
fixed seed reproduces every stage bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import agent, envs, world_model
from .agent import AgentParams, ReflectionSummary
from .controllers import learned_adaptive
from .imagination import (
    BudgetMeter,
    ImaginedTrajectory,
    PolicyCache,
    StepRecord,
    imagine_teacher_forced,
    poimdp_step,
    reflect,
    trajectory_summary_text,
)
from .rng import make_rng, split_seed


@dataclass
class TrainConfig:
    lambda_k: float = 0.2
    lambda_step: float = 0.01
    success_bonus: float = 0.01
    invalid_penalty: float = -0.1
    gamma: float = 0.99
    eta: float = 0.5
    alpha: float = 1.0
    beta: float = 0.01
    max_grad_norm: float = 1.0
    learning_rate_warmup: float = 0.5
    learning_rate_rl: float = 0.02
    epochs: int = 60
    K_max: int = 5
    update_per_step: bool = False
    # critic-only episodes before joint updates: until the value head prices in
    # the policy's own imagination costs, every k>0 step looks like a pure loss
    # and the horizon head collapses before the actor can learn anything
    critic_warmup_episodes: int = 100
    # the horizon head sees a noiseless -lambda_k*k cost every step but a noisy,
    # delayed benefit; updating it slower than the action head keeps the
    # allocation from collapsing before the benefit is credited
    k_head_lr_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lambda_k < 0 or self.beta < 0:
            raise ValueError("lambda_k and beta must be non-negative")


@dataclass(frozen=True)
class ExpertEpisode:
    task: envs.TaskSpec
    states: tuple[envs.EnvState, ...]
    actions: tuple[envs.Action, ...]


@dataclass
class PseudoLabeledStep:
    state: str
    expert_action: str
    k_candidates: list[int]
    scores: list[float]
    penalized_scores: list[float]
    k_label: int
    lookahead_summaries: list[str]
    reflections: list[ReflectionSummary]
    task: envs.TaskSpec


def shaped_reward(env_reward: float, k: int, valid: bool, done_success: bool, cfg: TrainConfig) -> float:
    """Environment reward minus horizon and step costs, plus bonuses/penalties."""
    if k < 0:
        raise ValueError("k must be non-negative")
    r = env_reward - cfg.lambda_k * k - cfg.lambda_step
    if done_success:
        r += cfg.success_bonus
    if not valid:
        r += cfg.invalid_penalty
    return r


def expert_episode(task: envs.TaskSpec) -> ExpertEpisode:
    """Replay the expert plan, collecting the visited states."""
    state, _ = envs.reset(task)
    plan = envs.expert_plan(state, task)
    states = [state]
    for action in plan:
        state = envs.env_step(state, action, task).next_state
        states.append(state)
    return ExpertEpisode(task, tuple(states[:-1]), tuple(plan))


# --------------------------------------------------------------------------
# gradient helpers (shared by every stage)
# --------------------------------------------------------------------------


def _policy_grad_terms(params: AgentParams, phi: np.ndarray, target_idx: int):
    """(log-prob, d log-prob / d action_weights) for one decision."""
    logits = phi @ params.action_weights / params.temperature
    z = logits - logits.max()
    e = np.exp(z)
    probs = e / e.sum()
    log_prob = float(np.log(probs[target_idx]))
    grad = (phi[target_idx] - probs @ phi) / params.temperature
    return log_prob, grad, probs


def _k_grad_terms(params: AgentParams, psi: np.ndarray, target_k: int):
    """(log-prob, d log-prob / d k_weights) for one horizon label."""
    logits = params.k_weights @ psi
    z = logits - logits.max()
    e = np.exp(z)
    q = e / e.sum()
    log_prob = float(np.log(q[target_k]))
    grad = -np.outer(q, psi)
    grad[target_k] += psi
    return log_prob, grad, q


def _clip_global(grads: list[np.ndarray], max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


# --------------------------------------------------------------------------
# behavior cloning
# --------------------------------------------------------------------------


def behavior_clone(task_source, n_tasks: int, seed: int, cfg: TrainConfig) -> AgentParams:
    """Fit the reactive action head on expert demonstrations."""
    if n_tasks <= 0:
        raise ValueError("n_tasks must be positive")
    samples = []
    for i in range(n_tasks):
        episode = expert_episode(task_source(i))
        for state, action in zip(episode.states, episode.actions):
            actions = envs.admissible_actions(state, episode.task)
            phi = agent.context_matrix(state, actions, episode.task, None)
            target = [str(a) for a in actions].index(str(action))
            samples.append((phi, target))
    params = agent.init_params(cfg.K_max)
    for _ in range(cfg.epochs):
        grad = np.zeros_like(params.action_weights)
        for phi, target in samples:
            _, g, _ = _policy_grad_terms(params, phi, target)
            grad -= g
        grad /= len(samples)
        _clip_global([grad], cfg.max_grad_norm)
        params.action_weights = params.action_weights - cfg.learning_rate_warmup * grad
    return params


def bc_dataset_nll(params: AgentParams, task_source, n_tasks: int) -> float:
    """Mean expert-action NLL without lookahead conditioning."""
    total, count = 0.0, 0
    for i in range(n_tasks):
        episode = expert_episode(task_source(i))
        for state, action in zip(episode.states, episode.actions):
            total -= agent.log_prob_action(params, state, episode.task, None, action)
            count += 1
    return total / count


# --------------------------------------------------------------------------
# stage 1: pseudo-labeling lookahead horizons
# --------------------------------------------------------------------------


def _prefix_trajectory(full: ImaginedTrajectory, k: int, remaining: int) -> ImaginedTrajectory:
    """Slice the cached deepest rollout down to horizon k (exact by prefix property)."""
    steps = full.steps[: min(k, len(full.steps))]
    if k == 0:
        reason = "none"
    elif steps and steps[-1].done and len(steps) < k:
        reason = "predicted_done"
    elif k > remaining:
        reason = "expert_exhausted"
    else:
        reason = "horizon_end"
    return ImaginedTrajectory(full.start_state, steps, k, reason)


def pseudo_label_dataset(
    expert_episodes: list[ExpertEpisode],
    wm,
    pi0: AgentParams,
    cfg: TrainConfig,
    meter: BudgetMeter | None = None,
    use_prefix_cache: bool = True,
) -> list[PseudoLabeledStep]:
    """Label each expert step with the horizon that best explains the action.

    Scores are expert-action log-likelihoods under the warm-started policy
    conditioned on the reflected teacher-forced rollout, penalized linearly in
    depth; ties resolve toward the shallower horizon.
    """
    meter = meter if meter is not None else BudgetMeter()
    labeled: list[PseudoLabeledStep] = []
    for episode in expert_episodes:
        task = episode.task
        cache = PolicyCache(pi0, task)
        n = len(episode.actions)
        for t in range(n):
            state = episode.states[t]
            expert_action = episode.actions[t]
            remaining = n - t
            k_top = min(cfg.K_max, remaining)
            if use_prefix_cache:
                full = imagine_teacher_forced(wm, state, list(episode.actions[t:]), k_top, meter)
                trajectories = [_prefix_trajectory(full, k, remaining) for k in range(k_top + 1)]
            else:
                trajectories = [
                    imagine_teacher_forced(wm, state, list(episode.actions[t:]), k, meter)
                    for k in range(k_top + 1)
                ]
            reflections = [reflect(traj, task) for traj in trajectories]
            key = envs.state_to_string(state)
            scores = []
            for summary in reflections:
                acts, probs = cache.distribution(key, state, summary)
                idx = [str(a) for a in acts].index(str(expert_action))
                scores.append(float(np.log(probs[idx])))
            penalized = [s - cfg.lambda_k * k for k, s in enumerate(scores)]
            k_label = int(np.argmax(penalized))  # first max = smallest k on ties
            labeled.append(
                PseudoLabeledStep(
                    state=key,
                    expert_action=str(expert_action),
                    k_candidates=list(range(k_top + 1)),
                    scores=scores,
                    penalized_scores=penalized,
                    k_label=k_label,
                    lookahead_summaries=[trajectory_summary_text(tr) for tr in trajectories],
                    reflections=reflections,
                    task=task,
                )
            )
    return labeled


# --------------------------------------------------------------------------
# stage 2: warm-up joint imitation
# --------------------------------------------------------------------------


def warmup_losses(params: AgentParams, labeled: list[PseudoLabeledStep], cfg: TrainConfig):
    """(action NLL, horizon NLL) on the labeled set, without gradients."""
    loss_pi, loss_k = 0.0, 0.0
    for step in labeled:
        state = envs.state_from_string(step.state)
        task = step.task
        summary = step.reflections[step.k_label]
        loss_pi -= agent.log_prob_action(params, state, task, summary, envs.parse_action(step.expert_action))
        psi = agent.encode_state(state, task).values
        log_k, _, _ = _k_grad_terms(params, psi, step.k_label)
        loss_k -= log_k
    n = len(labeled)
    return loss_pi / n, loss_k / n


def warmup_train(
    pi0: AgentParams, labeled: list[PseudoLabeledStep], wm, cfg: TrainConfig
) -> AgentParams:
    """Joint imitation of expert actions (lookahead-conditioned) and horizon labels."""
    if not labeled:
        raise ValueError("labeled dataset is empty")
    prepared = []
    for step in labeled:
        state = envs.state_from_string(step.state)
        task = step.task
        actions = envs.admissible_actions(state, task)
        summary = step.reflections[step.k_label]
        phi = agent.context_matrix(state, actions, task, summary)
        target = [str(a) for a in actions].index(step.expert_action)
        psi = agent.encode_state(state, task).values
        prepared.append((phi, target, psi, step.k_label))
    params = pi0.copy()
    n = len(prepared)
    # Teacher forcing makes the first imagined action equal the expert action on
    # every k>0 sample, so the raw agreement coordinate is pure label leakage
    # and unidentifiable from this data; it stays at its prior here and is
    # trained later by the on-policy stage, where the leak is absent.
    agree_coord = agent.CONTEXT_DIM - agent.LOOKAHEAD_DIM
    for _ in range(cfg.epochs):
        grad_w = np.zeros_like(params.action_weights)
        grad_k = np.zeros_like(params.k_weights)
        for phi, target, psi, k_label in prepared:
            _, g_w, _ = _policy_grad_terms(params, phi, target)
            grad_w -= g_w
            _, g_k, _ = _k_grad_terms(params, psi, k_label)
            grad_k -= cfg.eta * g_k
        grad_w /= n
        grad_k /= n
        grad_w[agree_coord] = 0.0
        _clip_global([grad_w, grad_k], cfg.max_grad_norm)
        params.action_weights = params.action_weights - cfg.learning_rate_warmup * grad_w
        params.k_weights = params.k_weights - cfg.learning_rate_warmup * grad_k
    return params


# --------------------------------------------------------------------------
# stage 3: online advantage actor-critic
# --------------------------------------------------------------------------


def a2c_losses_and_grads(params: AgentParams, batch: list[StepRecord], cfg: TrainConfig):
    """Loss components and analytic gradients with frozen TD targets.

    Advantages and value targets are computed from the incoming parameters and
    then held constant, the usual semi-gradient treatment; finite-difference
    checks must freeze them the same way.
    """
    n = len(batch)
    targets, advantages = [], []
    for rec in batch:
        v_s = agent.value(params, rec.state, rec.task)
        v_next = 0.0 if rec.done else agent.value(params, rec.next_state, rec.task)
        target = rec.shaped_reward + cfg.gamma * v_next * (0.0 if rec.done else 1.0)
        targets.append(target)
        advantages.append(target - v_s)
    return _a2c_inner(params, batch, cfg, np.array(targets), np.array(advantages))


def _a2c_inner(params, batch, cfg, targets, advantages):
    n = len(batch)
    loss_act = loss_value = loss_ent = 0.0
    grad_w = np.zeros_like(params.action_weights)
    grad_k = np.zeros_like(params.k_weights)
    grad_v = np.zeros_like(params.value_weights)
    for rec, target, adv in zip(batch, targets, advantages):
        task = rec.task
        state = rec.state
        summary = reflect(rec.trajectory, task)
        actions = envs.admissible_actions(state, task)
        phi = agent.context_matrix(state, actions, task, summary)
        idx = [str(a) for a in actions].index(str(rec.action))
        log_pi, g_pi, _ = _policy_grad_terms(params, phi, idx)
        psi = agent.encode_state(state, task).values
        log_k, g_k, q = _k_grad_terms(params, psi, rec.sampled_k)
        entropy = float(-(q * np.log(q)).sum())
        v_s = float(params.value_weights @ psi)

        loss_act -= adv * (log_k + log_pi)
        loss_value += (v_s - target) ** 2
        loss_ent -= entropy

        grad_w += -adv * g_pi
        grad_k += -adv * g_k
        grad_v += 2.0 * (v_s - target) * psi
        # d(-H)/dlogits = q * (log q + H), mapped back through the linear head
        ent_coeff = q * (np.log(q) + entropy)
        grad_k += cfg.beta * np.outer(ent_coeff, psi)
    loss_act /= n
    loss_value /= n
    loss_ent /= n
    grad_w /= n
    grad_k /= n
    grad_v = cfg.alpha * grad_v / n
    total = loss_act + cfg.alpha * loss_value + cfg.beta * loss_ent
    return {
        "loss_act": float(loss_act),
        "loss_value": float(loss_value),
        "loss_ent": float(loss_ent),
        "loss_total": float(total),
    }, [grad_w, grad_k, grad_v]


def a2c_update(
    params: AgentParams, batch: list[StepRecord], cfg: TrainConfig, critic_only: bool = False
):
    """Single clipped gradient step on the actor-critic objective."""
    if not batch:
        raise ValueError("batch is empty")
    report, grads = a2c_losses_and_grads(params, batch, cfg)
    if critic_only:
        grads[0] = np.zeros_like(grads[0])
        grads[1] = np.zeros_like(grads[1])
    pre_norm = _clip_global(grads, cfg.max_grad_norm)
    report["grad_norm"] = pre_norm
    updated = params.copy()
    updated.action_weights = params.action_weights - cfg.learning_rate_rl * grads[0]
    updated.k_weights = params.k_weights - cfg.learning_rate_rl * cfg.k_head_lr_scale * grads[1]
    updated.value_weights = params.value_weights - cfg.learning_rate_rl * grads[2]
    return updated, report


def online_train(
    params: AgentParams,
    task_source,
    wm,
    cfg: TrainConfig,
    episodes: int,
    seed: int,
):
    """Episode loop: sample horizons from the K-head, act, shape, update.

    The world model stays frozen; parameters update once per completed episode
    (or per step when cfg.update_per_step is set). Returns the trained
    parameters and a per-episode training-curve log.
    """
    params = params.copy()
    controller = learned_adaptive(mode="sample")
    curve = []

    def shaping(env_reward, k, valid, done_success):
        return shaped_reward(env_reward, k, valid, done_success, cfg)

    for ep in range(episodes):
        task = task_source(ep)
        rng = make_rng(seed, f"rl-episode:{ep}")
        cache = PolicyCache(params, task)
        meter = BudgetMeter()
        state, _ = envs.reset(task)
        records: list[StepRecord] = []
        done = False
        critic_only = ep < cfg.critic_warmup_episodes
        while not done:
            rec = poimdp_step(
                params, wm, state, task, controller, meter, rng, cache=cache, shaping=shaping
            )
            records.append(rec)
            state, done = rec.next_state, rec.done
            if cfg.update_per_step:
                params, report = a2c_update(params, [rec], cfg, critic_only=critic_only)
                cache = PolicyCache(params, task)
        if not cfg.update_per_step:
            params, report = a2c_update(params, records, cfg, critic_only=critic_only)
        ks = [r.sampled_k for r in records]
        curve.append(
            {
                "episode": ep,
                "shaped_return": sum(r.shaped_reward for r in records),
                "env_return": sum(r.env_reward for r in records),
                "mean_k": float(np.mean(ks)),
                "entropy_k": _mean_k_entropy(params, records),
                "loss_act": report["loss_act"],
                "loss_value": report["loss_value"],
                "loss_ent": report["loss_ent"],
                "steps": len(records),
                "budget": meter.total,
            }
        )
    return params, curve


def _mean_k_entropy(params: AgentParams, records: list[StepRecord]) -> float:
    vals = []
    for rec in records:
        q = agent.k_distribution(params, rec.state, rec.task)
        vals.append(float(-(q * np.log(q)).sum()))
    return float(np.mean(vals))
