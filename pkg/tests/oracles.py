"""Independent brute-force oracles used by the test suite.

Everything here re-derives expected behavior from first principles with its
own code paths (explicit rule tables, full action vocabularies, exhaustive
graph enumeration) so that production shortcuts are checked against slower
but obviously-correct implementations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import replace

from lookahead_lab.envs import (
    LAMP,
    STATIONS,
    Action,
    EnvState,
    Family,
    TaskSpec,
    action_vocabulary,
    admissible_actions,
    env_step,
    reset,
)

VERB_ATTR = {"clean": "clean", "heat": "hot", "cool": "cold", "examine": "examined"}
OPPOSITE = {"hot": "cold", "cold": "hot"}


def oracle_admissible(state: EnvState, action: Action, task: TaskSpec) -> bool:
    """Rule-by-rule admissibility re-derivation."""
    v, args = action.verb, action.args
    here = state.agent_location
    if v == "noop":
        return args == ()
    if v == "goto":
        return len(args) == 1 and args[0] in task.layout.locations and args[0] != here
    if v == "take":
        if len(args) != 1 or state.holding is not None:
            return False
        return dict(state.object_locations).get(args[0]) == here
    if v == "put":
        return len(args) == 2 and state.holding == args[0] and args[1] == here \
            and args[1] in task.layout.locations
    if v in VERB_ATTR:
        if len(args) != 1 or state.holding != args[0]:
            return False
        if here != STATIONS[VERB_ATTR[v]]:
            return False
        if v == "examine":
            return state.light_on
        return True
    if v == "toggle":
        return args == (LAMP,) and here == STATIONS["examined"]
    return False


def oracle_apply(state: EnvState, action: Action) -> EnvState:
    """Independent effect computation via plain dict manipulation."""
    v, args = action.verb, action.args
    locs = dict(state.object_locations)
    attrs = {o: set(a) for o, a in state.object_attrs}
    agent, holding, light = state.agent_location, state.holding, state.light_on
    if v == "goto":
        agent = args[0]
    elif v == "take":
        del locs[args[0]]
        holding = args[0]
    elif v == "put":
        locs[args[0]] = args[1]
        holding = None
    elif v in VERB_ATTR:
        gained = VERB_ATTR[v]
        bag = attrs.setdefault(args[0], set())
        bag.add(gained)
        bag.discard(OPPOSITE.get(gained, ""))
    elif v == "toggle":
        light = not light
    return EnvState(
        agent_location=agent,
        object_locations=tuple(sorted(locs.items())),
        object_attrs=tuple(
            sorted((o, tuple(sorted(a))) for o, a in attrs.items() if a)
        ),
        holding=holding,
        light_on=light,
        satisfied_subgoals=state.satisfied_subgoals,
        step_count=state.step_count,
    )


def oracle_subgoal_predicates(state: EnvState, task: TaskSpec) -> list[bool]:
    """Evaluate every milestone predicate from scratch (no latching)."""
    goal = task.goal
    locs = dict(state.object_locations)
    attrs = {o: set(a) for o, a in state.object_attrs}

    def at(obj, loc):
        return locs.get(obj) == loc

    def has(obj, attr):
        return attr in attrs.get(obj, set())

    fam = task.family
    if fam == Family.PICK:
        t = goal.targets[0]
        return [state.holding == t, at(t, goal.destination)]
    if fam in (Family.CLEAN, Family.HEAT, Family.COOL):
        t, a = goal.targets[0], goal.required_attr
        return [state.holding == t, has(t, a), at(t, goal.destination) and has(t, a)]
    if fam == Family.LOOK:
        t = goal.targets[0]
        return [state.holding == t, state.light_on, has(t, "examined")]
    if fam == Family.PICK2:
        n = sum(at(t, goal.destination) for t in goal.targets)
        return [n >= 1, n >= 2]
    out = []
    for link in goal.chain:
        out.append(at(link.obj, link.target) if link.kind == "place" else has(link.obj, link.target))
    return out


def oracle_latch(old_bits, preds, ordered: bool):
    bits = list(old_bits)
    for i in range(len(bits)):
        if bits[i]:
            continue
        if ordered and i > 0 and not bits[i - 1]:
            break
        if preds[i]:
            bits[i] = True
        elif ordered:
            break
    return tuple(bits)


def oracle_step(state: EnvState, action: Action, task: TaskSpec):
    """Full independent transition: (next_state, reward, done, valid)."""
    step = state.step_count + 1
    limit = step >= task.max_steps
    if not oracle_admissible(state, action, task):
        nxt = replace(state, step_count=step)
        return nxt, 0.0, limit, False
    moved = oracle_apply(state, action)
    preds = oracle_subgoal_predicates(moved, task)
    bits = oracle_latch(state.satisfied_subgoals, preds, task.family == Family.LAB_CHAIN)
    nxt = replace(moved, satisfied_subgoals=bits, step_count=step)
    newly = all(bits) and not all(state.satisfied_subgoals)
    return nxt, (1.0 if newly else 0.0), newly or limit, True


def enumerate_reachable(task: TaskSpec, limit: int = 200_000):
    """Forward closure over the full action vocabulary from reset."""
    start, _ = reset(task)
    start = replace(start, step_count=0)
    vocab = action_vocabulary(task)
    seen = {start}
    frontier = deque([start])
    edges = []
    while frontier:
        cur = frontier.popleft()
        for act in vocab:
            if not oracle_admissible(cur, act, task):
                continue
            nxt = oracle_apply(cur, act)
            preds = oracle_subgoal_predicates(nxt, task)
            bits = oracle_latch(cur.satisfied_subgoals, preds, task.family == Family.LAB_CHAIN)
            nxt = replace(nxt, satisfied_subgoals=bits, step_count=0)
            edges.append((cur, act, nxt))
            if nxt not in seen:
                seen.add(nxt)
                if len(seen) > limit:
                    raise RuntimeError("reachable space larger than oracle limit")
                frontier.append(nxt)
    return seen, edges


def bidirectional_distance(task: TaskSpec) -> int:
    """Meet-in-the-middle shortest distance on the fully enumerated graph."""
    states, edges = enumerate_reachable(task)
    fwd: dict[EnvState, list[EnvState]] = {}
    bwd: dict[EnvState, list[EnvState]] = {}
    for a, _, b in edges:
        fwd.setdefault(a, []).append(b)
        bwd.setdefault(b, []).append(a)
    start, _ = reset(task)
    start = replace(start, step_count=0)
    goals = {s for s in states if s.satisfied_subgoals and all(s.satisfied_subgoals)}
    if start in goals:
        return 0
    dist_f = {start: 0}
    dist_b = {g: 0 for g in goals}
    front_f, front_b = deque([start]), deque(goals)
    best = None
    while front_f or front_b:
        expand_fwd = len(front_f) <= len(front_b) and front_f or None
        if expand_fwd is not None:
            nxt_frontier = deque()
            for node in front_f:
                for succ in fwd.get(node, ()):  # noqa: B905
                    if succ not in dist_f:
                        dist_f[succ] = dist_f[node] + 1
                        nxt_frontier.append(succ)
                        if succ in dist_b:
                            cand = dist_f[succ] + dist_b[succ]
                            best = cand if best is None else min(best, cand)
            front_f = nxt_frontier
        else:
            nxt_frontier = deque()
            for node in front_b:
                for pred in bwd.get(node, ()):  # noqa: B905
                    if pred not in dist_b:
                        dist_b[pred] = dist_b[node] + 1
                        nxt_frontier.append(pred)
                        if pred in dist_f:
                            cand = dist_f[pred] + dist_b[pred]
                            best = cand if best is None else min(best, cand)
            front_b = nxt_frontier
        if best is not None:
            return best
    raise RuntimeError("no path from start to any goal state")


def full_bfs_distance(task: TaskSpec, cap: int = 64) -> int:
    """Plain BFS distance over the full vocabulary, stopping at first goal."""
    start, _ = reset(task)
    start = replace(start, step_count=0)
    if start.satisfied_subgoals and all(start.satisfied_subgoals):
        return 0
    vocab = action_vocabulary(task)
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        cur, d = frontier.popleft()
        if d >= cap:
            continue
        for act in vocab:
            if not oracle_admissible(cur, act, task):
                continue
            nxt = oracle_apply(cur, act)
            preds = oracle_subgoal_predicates(nxt, task)
            bits = oracle_latch(cur.satisfied_subgoals, preds, task.family == Family.LAB_CHAIN)
            nxt = replace(nxt, satisfied_subgoals=bits, step_count=0)
            if all(bits):
                return d + 1
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    raise RuntimeError(f"goal not found within {cap} steps")
