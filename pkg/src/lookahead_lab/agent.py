"""Linear policy, horizon and value heads over engineered state features.

The action head scores each candidate action by a dot product with a context
vector; the horizon head and value head read state features only. A compact
reflection summary of an imagined trajectory enters the context through a
block gated by "this candidate equals the trajectory's first action": summary
fields that are constant across candidates would cancel inside the softmax,
so only the gated form can steer the choice. Freshly cloned agents carry a
fixed prior on that block, standing in for a pretrained model's zero-shot
response to foresight it was never fine-tuned on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import envs

ENCODER_VERSION = 1

N_FAMILIES = len(envs.Family)
_FAMILY_INDEX = {fam: i for i, fam in enumerate(envs.Family)}
_VERB_INDEX = {verb: i for i, verb in enumerate(envs.VERBS)}
N_LOCATION_BUCKETS = 8

STATE_DIM = 1 + N_FAMILIES + 6 + len(envs.ATTRS) + N_LOCATION_BUCKETS
LOOKAHEAD_DIM = 4  # agree, agree*reaches_goal, agree*conflict, agree*progress_delta
N_RELEVANCE = 6
CONTEXT_DIM = STATE_DIM + len(envs.VERBS) + N_RELEVANCE + LOOKAHEAD_DIM

# zero-shot trust in an imagined plan: commit to its first action more when the
# rollout reaches the goal or gains progress; what to make of a conflicted
# rollout is left at zero, to be learned from experience
LOOKAHEAD_PRIOR = np.array([0.5, 3.0, 0.0, 2.5])

DEFAULT_TEMPERATURE = 0.7


class AgentError(Exception):
    pass


class NoAdmissibleActions(AgentError):
    pass


class InadmissibleAction(AgentError):
    pass


class EncoderVersionMismatch(AgentError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    encoder_version: int = ENCODER_VERSION


@dataclass(frozen=True)
class ReflectionSummary:
    reaches_goal: bool
    steps_to_goal: int | None
    conflict_flag: bool
    progress_delta: float
    first_imagined_action: envs.Action | None


NEUTRAL_SUMMARY = ReflectionSummary(
    reaches_goal=False,
    steps_to_goal=None,
    conflict_flag=False,
    progress_delta=0.0,
    first_imagined_action=None,
)


@dataclass
class AgentParams:
    action_weights: np.ndarray  # (CONTEXT_DIM,)
    k_weights: np.ndarray  # (K_max + 1, STATE_DIM)
    value_weights: np.ndarray  # (STATE_DIM,)
    K_max: int
    temperature: float = DEFAULT_TEMPERATURE
    encoder_version: int = ENCODER_VERSION

    def copy(self) -> "AgentParams":
        return AgentParams(
            self.action_weights.copy(),
            self.k_weights.copy(),
            self.value_weights.copy(),
            self.K_max,
            self.temperature,
            self.encoder_version,
        )


def init_params(k_max: int, temperature: float = DEFAULT_TEMPERATURE) -> AgentParams:
    """Zero-initialized heads plus the lookahead-trust prior on the action head."""
    w = np.zeros(CONTEXT_DIM)
    w[-LOOKAHEAD_DIM:] = LOOKAHEAD_PRIOR
    return AgentParams(
        action_weights=w,
        k_weights=np.zeros((k_max + 1, STATE_DIM)),
        value_weights=np.zeros(STATE_DIM),
        K_max=k_max,
        temperature=temperature,
    )


def _location_bucket(location: str) -> int:
    digest = hashlib.sha256(location.encode()).digest()
    return digest[0] % N_LOCATION_BUCKETS


def encode_state(state: envs.EnvState, task: envs.TaskSpec) -> FeatureVector:
    """Deterministic state features; see layout comments inline."""
    v = np.zeros(STATE_DIM)
    v[0] = 1.0  # bias
    v[1 + _FAMILY_INDEX[task.family]] = 1.0
    base = 1 + N_FAMILIES
    targets = task.goal.targets
    v[base + 0] = 1.0 if state.holding is not None else 0.0
    v[base + 1] = 1.0 if state.holding in targets else 0.0
    required = _required_attr(state, task)
    if state.holding in targets and required and required in state.attrs_of(state.holding):
        v[base + 2] = 1.0
    v[base + 3] = envs.subgoal_progress(state, task)
    v[base + 4] = state.step_count / max(task.max_steps, 1)
    v[base + 5] = 1.0 if state.light_on else 0.0
    attr_base = base + 6
    for i, attr in enumerate(envs.ATTRS):
        if required == attr and any(attr in state.attrs_of(t) for t in targets):
            v[attr_base + i] = 1.0
    loc_base = attr_base + len(envs.ATTRS)
    v[loc_base + _location_bucket(state.agent_location)] = 1.0
    return FeatureVector(v)


def _required_attr(state: envs.EnvState, task: envs.TaskSpec) -> str | None:
    """Attribute the goal currently asks for (next unlatched link for chains)."""
    if task.family != envs.Family.LAB_CHAIN:
        return task.goal.required_attr
    for bit, link in zip(state.satisfied_subgoals, task.goal.chain):
        if not bit:
            return link.target if link.kind == "attr" else None
    return None


def _active_chain_link(state: envs.EnvState, task: envs.TaskSpec) -> envs.ChainLink | None:
    for bit, link in zip(state.satisfied_subgoals, task.goal.chain):
        if not bit:
            return link
    return None


_ATTR_VERB = {"clean": "clean", "hot": "heat", "cold": "cool", "examined": "examine"}


def _relevance(state: envs.EnvState, action: envs.Action, task: envs.TaskSpec) -> np.ndarray:
    """Goal-relevance indicators for one candidate action."""
    r = np.zeros(N_RELEVANCE)
    goal = task.goal
    if task.family == envs.Family.LAB_CHAIN:
        link = _active_chain_link(state, task)
        targets = (link.obj,) if link else ()
        destination = link.target if link and link.kind == "place" else None
        required = link.target if link and link.kind == "attr" else None
    else:
        targets = goal.targets
        destination = goal.destination
        required = goal.required_attr
    args = action.args
    if args and args[0] in targets:
        r[0] = 1.0
    if action.verb == "put" and len(args) == 2 and args[0] in targets and args[1] == destination:
        r[1] = 1.0
    if required and action.verb == _ATTR_VERB.get(required) and args and args[0] in targets:
        r[2] = 1.0
    if action.verb == "goto" and destination and args and args[0] == destination:
        r[3] = 1.0
    if required and action.verb == "goto" and args and args[0] == envs.STATIONS[required]:
        r[4] = 1.0
    if action.verb == "toggle" and required == "examined" and not state.light_on:
        r[5] = 1.0
    return r


def encode_action_context(
    state: envs.EnvState,
    action: envs.Action,
    task: envs.TaskSpec,
    summary: ReflectionSummary | None = None,
) -> FeatureVector:
    """State features, verb one-hot, relevance block, gated lookahead block."""
    v = np.zeros(CONTEXT_DIM)
    v[:STATE_DIM] = encode_state(state, task).values
    v[STATE_DIM + _VERB_INDEX[action.verb]] = 1.0
    rel_base = STATE_DIM + len(envs.VERBS)
    v[rel_base : rel_base + N_RELEVANCE] = _relevance(state, action, task)
    if summary is not None and summary.first_imagined_action is not None:
        if action == summary.first_imagined_action:
            look = CONTEXT_DIM - LOOKAHEAD_DIM
            v[look + 0] = 1.0
            v[look + 1] = 1.0 if summary.reaches_goal else 0.0
            v[look + 2] = 1.0 if summary.conflict_flag else 0.0
            v[look + 3] = summary.progress_delta
    return FeatureVector(v)


def context_matrix(
    state: envs.EnvState,
    actions: list[envs.Action],
    task: envs.TaskSpec,
    summary: ReflectionSummary | None = None,
) -> np.ndarray:
    return np.stack(
        [encode_action_context(state, a, task, summary).values for a in actions]
    )


def _masked_logits(params: AgentParams, phi: np.ndarray) -> np.ndarray:
    return phi @ params.action_weights / params.temperature


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def policy_distribution(
    params: AgentParams,
    state: envs.EnvState,
    task: envs.TaskSpec,
    summary: ReflectionSummary | None = None,
    actions: list[envs.Action] | None = None,
) -> tuple[list[envs.Action], np.ndarray]:
    """Categorical over admissible actions (optionally precomputed)."""
    if actions is None:
        actions = envs.admissible_actions(state, task)
    if not actions:
        raise NoAdmissibleActions(envs.state_to_string(state))
    phi = context_matrix(state, actions, task, summary)
    return actions, _softmax(_masked_logits(params, phi))


def log_prob_action(
    params: AgentParams,
    state: envs.EnvState,
    task: envs.TaskSpec,
    summary: ReflectionSummary | None,
    action: envs.Action,
) -> float:
    """Log-probability of one admissible action under the policy."""
    actions, probs = policy_distribution(params, state, task, summary)
    for a, p in zip(actions, probs):
        if a == action:
            return float(np.log(p))
    raise InadmissibleAction(str(action))


def k_distribution(params: AgentParams, state: envs.EnvState, task: envs.TaskSpec) -> np.ndarray:
    """Categorical over horizons {0..K_max}."""
    psi = encode_state(state, task).values
    return _softmax(params.k_weights @ psi)


def value(params: AgentParams, state: envs.EnvState, task: envs.TaskSpec) -> float:
    """Linear state-value estimate."""
    return float(params.value_weights @ encode_state(state, task).values)


def sample_action(
    params: AgentParams,
    state: envs.EnvState,
    task: envs.TaskSpec,
    summary: ReflectionSummary | None,
    rng: np.random.Generator | None,
    actions: list[envs.Action] | None = None,
) -> envs.Action:
    """Sample from the policy; rng=None picks the argmax (first on ties)."""
    acts, probs = policy_distribution(params, state, task, summary, actions)
    if rng is None:
        return acts[int(np.argmax(probs))]
    return acts[int(rng.choice(len(acts), p=probs))]


def exploration_logits(
    params: AgentParams,
    state: envs.EnvState,
    task: envs.TaskSpec,
    vocab: list[envs.Action],
) -> np.ndarray:
    """Unmasked scores over the full vocabulary, for rollout exploration."""
    phi = context_matrix(state, vocab, task, None)
    return phi @ params.action_weights


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def params_to_json(params: AgentParams) -> dict:
    return {
        "encoder_version": params.encoder_version,
        "K_max": params.K_max,
        "temperature": params.temperature,
        "action_weights": params.action_weights.tolist(),
        "k_weights": params.k_weights.tolist(),
        "value_weights": params.value_weights.tolist(),
    }


def params_from_json(d: dict) -> AgentParams:
    if d["encoder_version"] != ENCODER_VERSION:
        raise EncoderVersionMismatch(
            f"checkpoint encoder_version {d['encoder_version']} != {ENCODER_VERSION}"
        )
    return AgentParams(
        action_weights=np.array(d["action_weights"], dtype=float),
        k_weights=np.array(d["k_weights"], dtype=float),
        value_weights=np.array(d["value_weights"], dtype=float),
        K_max=int(d["K_max"]),
        temperature=float(d["temperature"]),
        encoder_version=int(d["encoder_version"]),
    )


def params_to_bytes(params: AgentParams) -> bytes:
    return json.dumps(params_to_json(params), sort_keys=True).encode()


def params_from_bytes(blob: bytes) -> AgentParams:
    return params_from_json(json.loads(blob.decode()))
