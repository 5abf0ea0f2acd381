"""Mental-sandbox rollouts on the world model, reflection, and decision steps.

A decision step imagines a K-step future (policy-driven or teacher-forced),
compresses it into a five-field reflection summary, then samples the real
action conditioned on that summary. All model invocations are metered so
compute budgets can be compared across horizon controllers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import agent, envs, world_model
from .agent import NEUTRAL_SUMMARY, ReflectionSummary
from .controllers import LookaheadController, select_k

TRUNCATED_NONE = "none"
TRUNCATED_PREDICTED_DONE = "predicted_done"
TRUNCATED_HORIZON_END = "horizon_end"
TRUNCATED_EXPERT_EXHAUSTED = "expert_exhausted"


@dataclass(frozen=True)
class ImaginedStep:
    action: envs.Action
    state: str
    reward: float
    done: bool


@dataclass(frozen=True)
class ImaginedTrajectory:
    start_state: str
    steps: tuple[ImaginedStep, ...]
    requested_k: int
    truncated_reason: str

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class BudgetMeter:
    policy_calls: int = 0
    wm_calls: int = 0
    unit_cost_policy: float = 1.0
    unit_cost_wm: float = 1.0

    @property
    def total(self) -> float:
        return self.policy_calls * self.unit_cost_policy + self.wm_calls * self.unit_cost_wm


@dataclass
class StepRecord:
    state: envs.EnvState
    task: envs.TaskSpec
    sampled_k: int
    trajectory: ImaginedTrajectory
    action: envs.Action
    shaped_reward: float
    env_reward: float
    next_state: envs.EnvState
    done: bool
    valid: bool
    log_prob_k: float
    log_prob_action: float
    value_estimate: float


class PolicyCache:
    """Per-episode memo of state-derived quantities for one params snapshot.

    Valid only while the bound parameters stay unchanged; training code builds
    a fresh cache per episode after each update.
    """

    def __init__(self, params: agent.AgentParams, task: envs.TaskSpec):
        self.params = params
        self.task = task
        self._by_state: dict[str, tuple] = {}
        self._look_w = params.action_weights[-agent.LOOKAHEAD_DIM :]

    def entry(self, key: str, state: envs.EnvState):
        slot = (key, state.step_count)  # step fraction is a feature, so it keys too
        cached = self._by_state.get(slot)
        if cached is None:
            actions = envs.admissible_actions(state, self.task)
            phi = agent.context_matrix(state, actions, self.task, None)
            base_logits = phi @ self.params.action_weights / self.params.temperature
            psi = agent.encode_state(state, self.task).values
            k_logits = self.params.k_weights @ psi
            val = float(self.params.value_weights @ psi)
            index = {str(a): i for i, a in enumerate(actions)}
            cached = (actions, base_logits, index, k_logits, val)
            self._by_state[slot] = cached
        return cached

    def parse(self, key: str, step_count: int) -> envs.EnvState:
        return envs.state_from_string(key, step_count=step_count)

    def distribution(self, key: str, state: envs.EnvState, summary: ReflectionSummary | None):
        actions, base_logits, index, _, _ = self.entry(key, state)
        logits = base_logits
        if summary is not None and summary.first_imagined_action is not None:
            row = index.get(str(summary.first_imagined_action))
            if row is not None:
                feats = np.array(
                    [
                        1.0,
                        1.0 if summary.reaches_goal else 0.0,
                        1.0 if summary.conflict_flag else 0.0,
                        summary.progress_delta,
                    ]
                )
                logits = base_logits.copy()
                logits[row] += float(self._look_w @ feats) / self.params.temperature
        z = logits - logits.max()
        e = np.exp(z)
        return actions, e / e.sum()

    def k_distribution(self, key: str, state: envs.EnvState) -> np.ndarray:
        _, _, _, k_logits, _ = self.entry(key, state)
        z = k_logits - k_logits.max()
        e = np.exp(z)
        return e / e.sum()

    def value(self, key: str, state: envs.EnvState) -> float:
        return self.entry(key, state)[4]


def reflect(trajectory: ImaginedTrajectory, task: envs.TaskSpec) -> ReflectionSummary:
    """Compress an imagined trajectory into the fixed five-field summary."""
    if not trajectory.steps:
        return NEUTRAL_SUMMARY
    reaches_goal = False
    steps_to_goal = None
    for i, step in enumerate(trajectory.steps):
        if step.done and step.reward == 1.0:
            reaches_goal = True
            steps_to_goal = i + 1
            break
    conflict = False
    seen = {trajectory.start_state}
    prev = trajectory.start_state
    for step in trajectory.steps:
        if step.state == prev:
            if step.action.verb != "noop":
                conflict = True
                break
        elif step.state in seen:
            conflict = True
            break
        seen.add(step.state)
        prev = step.state
    try:
        start = envs.state_from_string(trajectory.start_state)
        last = envs.state_from_string(trajectory.steps[-1].state)
        progress_delta = envs.subgoal_progress(last, task) - envs.subgoal_progress(start, task)
    except envs.UnparseableState:
        conflict = True
        progress_delta = 0.0
    return ReflectionSummary(
        reaches_goal=reaches_goal,
        steps_to_goal=steps_to_goal,
        conflict_flag=conflict,
        progress_delta=progress_delta,
        first_imagined_action=trajectory.steps[0].action,
    )


def _undo_of(action: envs.Action, prev_location: str) -> envs.Action | None:
    """The action that would immediately revert the given one."""
    verb, args = action.verb, action.args
    if verb == "goto":
        return envs.Action("goto", (prev_location,))
    if verb == "take":
        return envs.Action("put", (args[0], prev_location))
    if verb == "put":
        return envs.Action("take", (args[0],))
    if verb == "toggle":
        return action
    return None


def imagine_policy_rollout(
    params: agent.AgentParams,
    wm,
    state: envs.EnvState,
    task: envs.TaskSpec,
    k: int,
    meter: BudgetMeter,
    rng: np.random.Generator | None,
    cache: PolicyCache | None = None,
) -> ImaginedTrajectory:
    """Roll the policy against the world model for up to k imagined steps.

    Each imagined step samples the policy from the latest imagined state,
    conditioned on a reflection of the partial trajectory, then queries the
    world model; rng=None makes both choices greedy/deterministic. Rehearsals
    keep narrative coherence: the exact undo of the previous imagined action
    is masked out while alternatives exist. If an imagined state ever fails
    to parse, the sandbox freezes on the last parseable state and lets
    reflection flag the conflict.
    """
    if not 0 <= k <= params.K_max:
        raise ValueError(f"k={k} outside [0, {params.K_max}]")
    start_key = envs.state_to_string(state)
    steps: list[ImaginedStep] = []
    reason = TRUNCATED_NONE if k == 0 else TRUNCATED_HORIZON_END
    cur_state = state
    cur_key = start_key
    last_action: envs.Action | None = None
    for i in range(k):
        partial = ImaginedTrajectory(start_key, tuple(steps), i, TRUNCATED_NONE)
        summary = reflect(partial, task)
        if cache is not None:
            actions, probs = cache.distribution(cur_key, cur_state, summary)
        else:
            actions, probs = agent.policy_distribution(params, cur_state, task, summary)
        if last_action is not None:
            undo = _undo_of(last_action, prev_location)
            if undo is not None and undo in actions:
                j = actions.index(undo)
                if probs[j] < 1.0:
                    probs = probs.copy()
                    probs[j] = 0.0
                    probs = probs / probs.sum()
        if rng is None:
            action = actions[int(np.argmax(probs))]
        else:
            action = actions[int(rng.choice(len(actions), p=probs))]
        prev_location = cur_state.agent_location
        last_action = action
        meter.policy_calls += 1
        nxt_key, reward, done = world_model.predict_next(wm, cur_key, str(action), rng)
        meter.wm_calls += 1
        steps.append(ImaginedStep(action, nxt_key, reward, done))
        if done:
            reason = TRUNCATED_PREDICTED_DONE if len(steps) < k else TRUNCATED_HORIZON_END
            break
        try:
            nxt_state = envs.state_from_string(
                nxt_key, step_count=min(state.step_count + i + 1, task.max_steps - 1)
            )
            cur_state, cur_key = nxt_state, nxt_key
        except envs.UnparseableState:
            pass  # freeze on the last parseable state
    if len(steps) == k:
        reason = TRUNCATED_NONE if k == 0 else TRUNCATED_HORIZON_END
    return ImaginedTrajectory(start_key, tuple(steps), k, reason)


def imagine_teacher_forced(
    wm,
    state: envs.EnvState,
    expert_actions: list[envs.Action],
    k: int,
    meter: BudgetMeter,
) -> ImaginedTrajectory:
    """Feed expert actions through the world model; deterministic by design.

    Uses mode decoding (no sampling), so the j-step trajectory is always a
    prefix of the k-step one — the property that makes horizon caching exact.
    """
    start_key = envs.state_to_string(state)
    steps: list[ImaginedStep] = []
    forced = expert_actions[:k]
    reason = TRUNCATED_HORIZON_END if k > 0 else TRUNCATED_NONE
    if len(forced) < k:
        reason = TRUNCATED_EXPERT_EXHAUSTED
    cur_key = start_key
    for action in forced:
        nxt_key, reward, done = world_model.predict_next(wm, cur_key, str(action), None)
        meter.wm_calls += 1
        steps.append(ImaginedStep(action, nxt_key, reward, done))
        if done:
            if len(steps) < min(k, len(expert_actions)):
                reason = TRUNCATED_PREDICTED_DONE
            break
        cur_key = nxt_key
    if k == 0:
        reason = TRUNCATED_NONE
    return ImaginedTrajectory(start_key, tuple(steps), k, reason)


def poimdp_step(
    params: agent.AgentParams,
    wm,
    env_state: envs.EnvState,
    task: envs.TaskSpec,
    controller: LookaheadController,
    meter: BudgetMeter,
    rng: np.random.Generator | None,
    cache: PolicyCache | None = None,
    shaping=None,
) -> StepRecord:
    """One full decide-imagine-reflect-act-execute cycle in the real env."""
    k = select_k(controller, params, env_state, task, rng)
    trajectory = imagine_policy_rollout(params, wm, env_state, task, k, meter, rng, cache)
    summary = reflect(trajectory, task)
    key = envs.state_to_string(env_state)
    if cache is not None:
        actions, probs = cache.distribution(key, env_state, summary)
        k_dist = cache.k_distribution(key, env_state)
        value_estimate = cache.value(key, env_state)
    else:
        actions, probs = agent.policy_distribution(params, env_state, task, summary)
        k_dist = agent.k_distribution(params, env_state, task)
        value_estimate = agent.value(params, env_state, task)
    if rng is None:
        idx = int(np.argmax(probs))
    else:
        idx = int(rng.choice(len(actions), p=probs))
    meter.policy_calls += 1
    action = actions[idx]
    outcome = envs.env_step(env_state, action, task)
    env_reward = outcome.reward
    done_success = outcome.done and env_reward == 1.0
    if shaping is not None:
        shaped = shaping(env_reward, k, outcome.valid, done_success)
    else:
        shaped = env_reward
    return StepRecord(
        state=env_state,
        task=task,
        sampled_k=k,
        trajectory=trajectory,
        action=action,
        shaped_reward=shaped,
        env_reward=env_reward,
        next_state=outcome.next_state,
        done=outcome.done,
        valid=outcome.valid,
        log_prob_k=float(np.log(k_dist[k])),
        log_prob_action=float(np.log(probs[idx])),
        value_estimate=value_estimate,
    )


def trajectory_summary_text(trajectory: ImaginedTrajectory) -> str:
    """Compact "action -> state" hop rendering for dataset files."""
    if not trajectory.steps:
        return ""
    return " ; ".join(f"{step.action} -> {step.state}" for step in trajectory.steps)
