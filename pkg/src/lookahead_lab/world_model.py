"""Tabular transition model over canonical state strings.

Dynamics here are deterministic and small, so the likelihood-maximizing
model is exact empirical counting; optional additive smoothing covers
stochastic extensions. A noise wrapper corrupts sampled successors with a
configurable probability to emulate an imperfect learned model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import envs
from .rng import make_rng

LOG_ZERO = -1e9  # sentinel for log(0) with unsmoothed tables


class WorldModelError(Exception):
    pass


class EmptyDataset(WorldModelError):
    pass


class UnseenTransition(WorldModelError):
    pass


@dataclass(frozen=True)
class TransitionRecord:
    state: str
    action: str
    next_state: str
    reward: float
    done: bool

    def to_json(self) -> dict:
        return {
            "state": self.state,
            "action": self.action,
            "next_state": self.next_state,
            "reward": self.reward,
            "done": self.done,
        }

    @staticmethod
    def from_json(d: dict) -> "TransitionRecord":
        return TransitionRecord(
            d["state"], d["action"], d["next_state"], float(d["reward"]), bool(d["done"])
        )


@dataclass
class WorldModelParams:
    """Counted categorical p(next | state, action) plus reward/done signals."""

    table: dict  # (state, action) -> list of [next_state, reward, done, count]
    smoothing_alpha: float = 0.0
    fallback: str = "self_loop"  # or "error"

    def observed_successors(self) -> list[str]:
        seen = set()
        for entries in self.table.values():
            for nxt, _, _, _ in entries:
                seen.add(nxt)
        return sorted(seen)


@dataclass
class NoisyWorldModel:
    """Wraps a fitted table; with probability epsilon the sampled successor is
    replaced by a uniform draw over all successors observed anywhere in the
    table, with reward/done re-derived from the corrupted state's subgoal bits."""

    inner: WorldModelParams
    epsilon: float
    noise_seed: int = 0

    _successor_pool: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self._successor_pool = self.inner.observed_successors()


def fit_world_model(data: list[TransitionRecord], alpha: float = 0.0) -> WorldModelParams:
    """Exact tabular fit: counts are the NLL minimizer for a categorical model."""
    if not data:
        raise EmptyDataset("cannot fit a world model on zero records")
    table: dict = {}
    for rec in data:
        key = (rec.state, rec.action)
        entries = table.setdefault(key, [])
        for entry in entries:
            if entry[0] == rec.next_state and entry[1] == rec.reward and entry[2] == rec.done:
                entry[3] += 1
                break
        else:
            entries.append([rec.next_state, rec.reward, rec.done, 1])
    for entries in table.values():
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return WorldModelParams(table=table, smoothing_alpha=float(alpha))


def _probabilities(wm: WorldModelParams, entries) -> np.ndarray:
    counts = np.array([e[3] for e in entries], dtype=float)
    alpha = wm.smoothing_alpha
    return (counts + alpha) / (counts.sum() + alpha * len(entries))


def predict_next(
    wm: WorldModelParams | NoisyWorldModel,
    state: str,
    action: str,
    rng: np.random.Generator | None = None,
) -> tuple[str, float, bool]:
    """Sample (next_state, reward, done); rng=None takes the categorical mode.

    Mode prediction is the deterministic decoding used by teacher forcing; it
    also bypasses noise injection, which models sampling-time errors only.
    """
    noisy = isinstance(wm, NoisyWorldModel)
    base = wm.inner if noisy else wm
    entries = base.table.get((state, action))
    if entries is None:
        if base.fallback == "self_loop":
            return state, 0.0, False
        raise UnseenTransition(f"no data for state={state!r} action={action!r}")
    if rng is None:
        idx = int(np.argmax([e[3] for e in entries]))
        return entries[idx][0], entries[idx][1], entries[idx][2]
    probs = _probabilities(base, entries)
    idx = int(rng.choice(len(entries), p=probs))
    nxt, reward, done = entries[idx][0], entries[idx][1], entries[idx][2]
    if noisy and wm.epsilon > 0.0 and rng.random() < wm.epsilon:
        pool = wm._successor_pool
        nxt = pool[int(rng.integers(0, len(pool)))]
        done = envs.all_subgoals_satisfied(nxt)
        reward = 1.0 if done else 0.0
    return nxt, reward, done


def wm_log_likelihood(
    wm: WorldModelParams | NoisyWorldModel, state: str, action: str, next_state: str
) -> float:
    """log p(next_state | state, action) under the (inner) table."""
    base = wm.inner if isinstance(wm, NoisyWorldModel) else wm
    entries = base.table.get((state, action))
    if entries is None:
        if base.fallback == "self_loop":
            return 0.0 if next_state == state else LOG_ZERO
        raise UnseenTransition(f"no data for state={state!r} action={action!r}")
    probs = _probabilities(base, entries)
    mass = sum(p for e, p in zip(entries, probs) if e[0] == next_state)
    if mass <= 0.0:
        return LOG_ZERO
    return float(np.log(mass))


def dataset_nll(wm: WorldModelParams, data: list[TransitionRecord]) -> float:
    """Total negative log-likelihood of a record set."""
    return -sum(wm_log_likelihood(wm, r.state, r.action, r.next_state) for r in data)


# --------------------------------------------------------------------------
# rollout collection
# --------------------------------------------------------------------------


def collect_rollouts(
    policy,
    task_source,
    n_episodes: int,
    seed: int,
    temperature: float | None = None,
    unmasked_mix: float = 0.1,
) -> list[TransitionRecord]:
    """Explore with the warm-started policy to build the rollout dataset.

    Most steps sample the admissible-masked policy at the exploration
    temperature; a fixed fraction samples the full instance vocabulary
    instead, so the data also covers out-of-distribution actions and their
    "Nothing happened" echoes.
    """
    from .agent import exploration_logits  # local import to avoid a cycle

    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    records: list[TransitionRecord] = []
    for ep in range(n_episodes):
        task = task_source(ep)
        rng = make_rng(seed, f"rollout:{ep}")
        state, _ = envs.reset(task)
        done = False
        while not done:
            if rng.random() < unmasked_mix:
                candidates = envs.action_vocabulary(task)
            else:
                candidates = envs.admissible_actions(state, task)
            logits = exploration_logits(policy, state, task, candidates)
            temp = temperature if temperature is not None else policy.temperature
            z = logits / max(temp, 1e-8)
            z -= z.max()
            probs = np.exp(z)
            probs /= probs.sum()
            action = candidates[int(rng.choice(len(candidates), p=probs))]
            out = envs.env_step(state, action, task)
            records.append(
                TransitionRecord(
                    state=envs.state_to_string(state),
                    action=str(action),
                    next_state=envs.state_to_string(out.next_state),
                    reward=out.reward,
                    done=out.done,
                )
            )
            state, done = out.next_state, out.done
    return records


def expert_records(task, plan=None) -> list[TransitionRecord]:
    """Transition records along the expert plan of one task."""
    state, _ = envs.reset(task)
    if plan is None:
        plan = envs.expert_plan(state, task)
    records = []
    for action in plan:
        out = envs.env_step(state, action, task)
        records.append(
            TransitionRecord(
                state=envs.state_to_string(state),
                action=str(action),
                next_state=envs.state_to_string(out.next_state),
                reward=out.reward,
                done=out.done,
            )
        )
        state = out.next_state
    return records


def enumerate_coverage(task) -> list[TransitionRecord]:
    """One record per reachable (state, vocabulary-action) pair.

    Enumeration keeps step counters away from the step limit, so records are
    free of timeout terminations and the fitted table is exactly the
    deterministic transition function restricted to reachable states.
    """
    from collections import deque

    state, _ = envs.reset(task)
    vocab = envs.action_vocabulary(task)
    seen = {state}
    frontier = deque([state])
    records = []
    while frontier:
        current = frontier.popleft()
        for action in vocab:
            out = envs.env_step(current, action, task)
            nxt = out.next_state
            records.append(
                TransitionRecord(
                    state=envs.state_to_string(current),
                    action=str(action),
                    next_state=envs.state_to_string(nxt),
                    reward=out.reward,
                    done=out.done,
                )
            )
            key = replace(nxt, step_count=0)
            if out.valid and not out.done and key not in seen:
                seen.add(key)
                frontier.append(key)
    return records
