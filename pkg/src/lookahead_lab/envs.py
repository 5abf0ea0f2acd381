"""Deterministic toy task environments with symbolic household/lab dynamics.

Seven compositional task families run on a small set of named locations and
objects. The full state is symbolic and serializes to a canonical string that
doubles as the textual observation, so downstream modules can treat states as
opaque strings and parse them back when they need structure.

Dynamics are pure functions: ``env_step(state, action, task)`` never mutates
its inputs, and everything is deterministic given the task's instance seed.
Inadmissible actions leave the world untouched and observe "Nothing happened".
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum

from .rng import make_rng, split_seed


class Family(str, Enum):
    PICK = "PICK"
    CLEAN = "CLEAN"
    HEAT = "HEAT"
    COOL = "COOL"
    LOOK = "LOOK"
    PICK2 = "PICK2"
    LAB_CHAIN = "LAB_CHAIN"


HOUSE_FAMILIES = (
    Family.PICK,
    Family.CLEAN,
    Family.HEAT,
    Family.COOL,
    Family.LOOK,
    Family.PICK2,
)

ATTRS = ("clean", "cold", "examined", "hot")
VERBS = ("clean", "cool", "examine", "goto", "heat", "noop", "put", "take", "toggle")

# attribute -> location where the attribute can be applied
STATIONS = {"clean": "sinkbasin", "hot": "microwave", "cold": "fridge", "examined": "desk"}
SPECIAL_LOCATIONS = ("desk", "fridge", "microwave", "sinkbasin")
PLAIN_LOCATIONS = ("cabinet", "countertop", "diningtable", "drawer", "shelf", "sidetable")
OBJECT_TYPES = ("apple", "book", "cloth", "cup", "egg", "mug", "pan", "plate", "soap", "tomato")
LAMP = "desklamp"

FAMILY_ATTR = {
    Family.CLEAN: "clean",
    Family.HEAT: "hot",
    Family.COOL: "cold",
    Family.LOOK: "examined",
}

NOTHING_HAPPENED = "Nothing happened"

INVALID_PENALTY_FREE_REWARD = 0.0


class EnvError(Exception):
    pass


class StepLimitExceeded(EnvError):
    """env_step was called on a state that already hit the step limit."""


class Unsolvable(EnvError):
    """No goal state is reachable within the remaining step budget."""


class UnparseableState(EnvError):
    """A canonical state string failed to parse."""


@dataclass(frozen=True)
class Action:
    verb: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return " ".join((self.verb,) + self.args)


def parse_action(text: str) -> Action:
    parts = text.split()
    if not parts or parts[0] not in VERBS:
        raise ValueError(f"bad action string: {text!r}")
    return Action(parts[0], tuple(parts[1:]))


NOOP = Action("noop")


@dataclass(frozen=True)
class ChainLink:
    """One ordered sub-goal of a LAB_CHAIN task: place an object or apply an attribute."""

    kind: str  # "place" | "attr"
    obj: str
    target: str  # location for "place", attribute name for "attr"

    def to_json(self) -> dict:
        return {"kind": self.kind, "obj": self.obj, "target": self.target}

    @staticmethod
    def from_json(d: dict) -> "ChainLink":
        return ChainLink(d["kind"], d["obj"], d["target"])


@dataclass(frozen=True)
class GoalDescriptor:
    targets: tuple[str, ...]
    destination: str | None
    required_attr: str | None
    chain: tuple[ChainLink, ...] = ()

    def to_json(self) -> dict:
        return {
            "targets": list(self.targets),
            "destination": self.destination,
            "required_attr": self.required_attr,
            "chain": [link.to_json() for link in self.chain],
        }

    @staticmethod
    def from_json(d: dict) -> "GoalDescriptor":
        return GoalDescriptor(
            tuple(d["targets"]),
            d["destination"],
            d["required_attr"],
            tuple(ChainLink.from_json(x) for x in d.get("chain", ())),
        )


@dataclass(frozen=True)
class InstanceLayout:
    """Static furniture of one task instance; derived from the instance seed."""

    locations: tuple[str, ...]
    objects: tuple[str, ...]
    initial_object_locations: tuple[tuple[str, str], ...]
    initial_agent_location: str


@dataclass(frozen=True)
class TaskSpec:
    family: Family
    goal: GoalDescriptor
    instance_seed: int
    max_steps: int
    layout: InstanceLayout

    def to_json(self) -> dict:
        return {
            "family": self.family.value,
            "instance_seed": self.instance_seed,
            "goal": self.goal.to_json(),
            "max_steps": self.max_steps,
        }


def task_from_json(d: dict) -> TaskSpec:
    """Rebuild a task from its wire form; the layout regenerates from the seed."""
    family = Family(d["family"])
    chain_len = len(d["goal"].get("chain", ())) or None
    task = sample_task(family, d["instance_seed"], chain_len=chain_len)
    if task.goal != GoalDescriptor.from_json(d["goal"]) or task.max_steps != d["max_steps"]:
        raise ValueError("task JSON does not match its regenerated instance")
    return task


@dataclass(frozen=True)
class EnvState:
    agent_location: str
    object_locations: tuple[tuple[str, str], ...]  # (obj, loc), sorted, excludes held
    object_attrs: tuple[tuple[str, tuple[str, ...]], ...]  # (obj, sorted attrs), non-empty only
    holding: str | None
    light_on: bool
    satisfied_subgoals: tuple[bool, ...]
    step_count: int

    def location_of(self, obj: str) -> str | None:
        if obj == self.holding:
            return None
        for name, loc in self.object_locations:
            if name == obj:
                return loc
        return None

    def attrs_of(self, obj: str) -> frozenset[str]:
        for name, attrs in self.object_attrs:
            if name == obj:
                return frozenset(attrs)
        return frozenset()


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    observation: str
    reward: float
    done: bool
    valid: bool


def state_to_string(state: EnvState) -> str:
    """Canonical serialization; injective over a task's reachable states.

    step_count is deliberately excluded so that the string captures only the
    physical situation: world-model keys stay Markov and an echoed invalid
    transition is detectable as an unchanged string.
    """
    objs = ",".join(f"{o}:{l}" for o, l in state.object_locations)
    attrs = ",".join(f"{o}:{'+'.join(a)}" for o, a in state.object_attrs if a)
    bits = "".join("1" if b else "0" for b in state.satisfied_subgoals)
    return (
        f"at={state.agent_location}|hold={state.holding or '-'}|"
        f"light={int(state.light_on)}|objs={objs}|attrs={attrs}|sub={bits}"
    )


def state_from_string(text: str, step_count: int = 0) -> EnvState:
    """Parse a canonical string back into a state."""
    try:
        fields = dict(part.split("=", 1) for part in text.split("|"))
        objs = tuple(
            (pair.split(":")[0], pair.split(":")[1])
            for pair in fields["objs"].split(",")
            if pair
        )
        attrs = tuple(
            (pair.split(":")[0], tuple(pair.split(":")[1].split("+")))
            for pair in fields["attrs"].split(",")
            if pair
        )
        holding = None if fields["hold"] == "-" else fields["hold"]
        return EnvState(
            agent_location=fields["at"],
            object_locations=objs,
            object_attrs=attrs,
            holding=holding,
            light_on=fields["light"] == "1",
            satisfied_subgoals=tuple(b == "1" for b in fields["sub"]),
            step_count=step_count,
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise UnparseableState(f"cannot parse state string: {text!r}") from exc


def all_subgoals_satisfied(text: str) -> bool:
    """Check the subgoal bits of a canonical string without a full parse."""
    for part in text.split("|"):
        if part.startswith("sub="):
            bits = part[4:]
            return bool(bits) and "0" not in bits
    raise UnparseableState(f"no subgoal field in: {text!r}")


# --------------------------------------------------------------------------
# goal predicates and subgoal milestones
# --------------------------------------------------------------------------


def _milestones(task: TaskSpec) -> list:
    """Ordered milestone predicates; each returns bool given a state."""
    cached = getattr(task, "_milestone_cache", None)
    if cached is not None:
        return cached
    goal = task.goal
    fam = task.family
    if fam == Family.PICK:
        t = goal.targets[0]
        return _memoize_on_task(task, "_milestone_cache", [
            lambda s: s.holding == t,
            lambda s: s.location_of(t) == goal.destination,
        ])
    if fam in (Family.CLEAN, Family.HEAT, Family.COOL):
        t = goal.targets[0]
        attr = goal.required_attr
        return _memoize_on_task(task, "_milestone_cache", [
            lambda s: s.holding == t,
            lambda s: attr in s.attrs_of(t),
            lambda s: s.location_of(t) == goal.destination and attr in s.attrs_of(t),
        ])
    if fam == Family.LOOK:
        t = goal.targets[0]
        return _memoize_on_task(task, "_milestone_cache", [
            lambda s: s.holding == t,
            lambda s: s.light_on,
            lambda s: "examined" in s.attrs_of(t),
        ])
    if fam == Family.PICK2:
        def at_dest_count(s: EnvState) -> int:
            return sum(1 for t in goal.targets if s.location_of(t) == goal.destination)

        return _memoize_on_task(
            task, "_milestone_cache",
            [lambda s: at_dest_count(s) >= 1, lambda s: at_dest_count(s) >= 2],
        )
    if fam == Family.LAB_CHAIN:
        def link_pred(link: ChainLink):
            if link.kind == "place":
                return lambda s: s.location_of(link.obj) == link.target
            return lambda s: link.target in s.attrs_of(link.obj)

        return _memoize_on_task(
            task, "_milestone_cache", [link_pred(link) for link in goal.chain]
        )
    raise ValueError(f"unknown family {fam}")


def _memoize_on_task(task: TaskSpec, attr: str, value):
    object.__setattr__(task, attr, value)  # cache slot, not a dataclass field
    return value


def _latch_subgoals(state: EnvState, task: TaskSpec) -> tuple[bool, ...]:
    """Latch milestone bits: once satisfied they stay; LAB_CHAIN latches in order."""
    preds = _milestones(task)
    bits = list(state.satisfied_subgoals)
    if task.family == Family.LAB_CHAIN:
        for i in range(len(bits)):
            if bits[i]:
                continue
            if i > 0 and not bits[i - 1]:
                break
            if preds[i](state):
                bits[i] = True
            else:
                break
    else:
        for i in range(len(bits)):
            if not bits[i] and preds[i](state):
                bits[i] = True
    return tuple(bits)


def subgoal_progress(state: EnvState, task: TaskSpec) -> float:
    """Fraction of latched sub-goals, in [0, 1]."""
    bits = state.satisfied_subgoals
    return sum(bits) / len(bits) if bits else 0.0


# --------------------------------------------------------------------------
# task generation
# --------------------------------------------------------------------------


def _goal_objects(task: TaskSpec) -> tuple[str, ...]:
    if task.family == Family.LAB_CHAIN:
        seen: list[str] = []
        for link in task.goal.chain:
            if link.obj not in seen:
                seen.append(link.obj)
        return tuple(seen)
    return task.goal.targets


def sample_task(family: Family, seed: int, chain_len: int | None = None) -> TaskSpec:
    """Generate a solvable task instance, deterministic in (family, seed).

    Instances are constructed solvable (targets never start satisfied); the
    resample loop is a guard against generator regressions only.
    """
    family = Family(family)
    for attempt in range(1000):
        rng = make_rng(split_seed(seed, f"task:{family.value}:{attempt}"))
        try:
            task, plan_len = _build_instance(family, seed, rng, chain_len)
        except Unsolvable:
            continue
        if plan_len > 0:
            return task
    raise EnvError(f"could not sample a solvable {family.value} task from seed {seed}")


def _build_instance(
    family: Family, seed: int, rng, chain_len: int | None
) -> tuple[TaskSpec, int]:
    n_plain = int(rng.integers(1, 3)) if family != Family.LAB_CHAIN else 2
    plain = sorted(rng.choice(PLAIN_LOCATIONS, size=n_plain, replace=False).tolist())
    locations = tuple(sorted(SPECIAL_LOCATIONS + tuple(plain)))

    if family == Family.LAB_CHAIN:
        n_types = 2
    elif family == Family.PICK2:
        n_types = 3  # twin targets plus two distractors
    else:
        n_types = int(rng.integers(3, 5))
    types = rng.choice(OBJECT_TYPES, size=n_types, replace=False).tolist()

    target_type = types[int(rng.integers(0, len(types)))]
    objects = []
    for t in sorted(types):
        objects.append(f"{t}1")
        if family == Family.PICK2 and t == target_type:
            objects.append(f"{t}2")
    objects = tuple(sorted(objects))

    placement = {o: locations[int(rng.integers(0, len(locations)))] for o in objects}
    agent_start = locations[int(rng.integers(0, len(locations)))]

    required_attr = FAMILY_ATTR.get(family)
    chain: tuple[ChainLink, ...] = ()
    if family == Family.PICK2:
        targets = (f"{target_type}1", f"{target_type}2")
    elif family == Family.LAB_CHAIN:
        targets = tuple(objects)
    else:
        targets = (f"{target_type}1",)

    if family == Family.LOOK:
        destination = None
    elif family == Family.LAB_CHAIN:
        destination = None
        chain = _sample_chain(rng, objects, locations, chain_len or 6, placement)
        targets = tuple(dict.fromkeys(link.obj for link in chain))
    else:
        candidates = [l for l in plain if all(placement[t] != l for t in targets)]
        if not candidates:
            candidates = [l for l in locations if all(placement[t] != l for t in targets)]
        destination = candidates[int(rng.integers(0, len(candidates)))]
        # targets must not start at the destination (or satisfied at reset)
        for t in targets:
            if placement[t] == destination:
                others = [l for l in locations if l != destination]
                placement[t] = others[int(rng.integers(0, len(others)))]

    goal = GoalDescriptor(targets, destination, required_attr, chain)
    layout = InstanceLayout(
        locations=locations,
        objects=objects,
        initial_object_locations=tuple(sorted(placement.items())),
        initial_agent_location=agent_start,
    )
    probe = TaskSpec(family, goal, seed, 10_000, layout)
    state, _ = reset(probe)
    plan_len = len(expert_plan(state, probe))
    if family == Family.LAB_CHAIN:
        max_steps = plan_len + 14
    else:
        max_steps = 2 * plan_len + 6
    return replace(probe, max_steps=max_steps), plan_len


def _sample_chain(rng, objects, locations, chain_len, placement) -> tuple[ChainLink, ...]:
    """Random feasible ordered chain over the instance's objects."""
    links: list[ChainLink] = []
    used_attr_pairs: set[tuple[str, str]] = set()
    expected_loc = dict(placement)
    for _ in range(chain_len):
        obj = objects[int(rng.integers(0, len(objects)))]
        if rng.random() < 0.5:
            choices = [a for a in ATTRS if (obj, a) not in used_attr_pairs]
            if choices:
                attr = choices[int(rng.integers(0, len(choices)))]
                used_attr_pairs.add((obj, attr))
                links.append(ChainLink("attr", obj, attr))
                continue
        spots = [l for l in locations if l != expected_loc[obj]]
        loc = spots[int(rng.integers(0, len(spots)))]
        expected_loc[obj] = loc
        links.append(ChainLink("place", obj, loc))
    return tuple(links)


def reset(task: TaskSpec) -> tuple[EnvState, str]:
    """Initial state and its observation for a task."""
    probe = EnvState(
        agent_location=task.layout.initial_agent_location,
        object_locations=task.layout.initial_object_locations,
        object_attrs=(),
        holding=None,
        light_on=False,
        satisfied_subgoals=(),
        step_count=0,
    )
    n_sub = len(_milestones(task))
    state = replace(probe, satisfied_subgoals=(False,) * n_sub)
    return state, state_to_string(state)


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------


def action_vocabulary(task: TaskSpec) -> list[Action]:
    """Every instance-level action string, admissible or not, sorted."""
    cached = getattr(task, "_vocab_cache", None)
    if cached is not None:
        return cached
    acts = [NOOP, Action("toggle", (LAMP,))]
    for loc in task.layout.locations:
        acts.append(Action("goto", (loc,)))
    for obj in task.layout.objects:
        acts.append(Action("take", (obj,)))
        for verb in ("clean", "heat", "cool", "examine"):
            acts.append(Action(verb, (obj,)))
        for loc in task.layout.locations:
            acts.append(Action("put", (obj, loc)))
    return _memoize_on_task(task, "_vocab_cache", sorted(acts, key=str))


def _is_admissible(state: EnvState, action: Action, task: TaskSpec) -> bool:
    verb, args = action.verb, action.args
    if verb == "noop":
        return not args
    if verb == "goto":
        return len(args) == 1 and args[0] in task.layout.locations and args[0] != state.agent_location
    if verb == "take":
        return (
            len(args) == 1
            and state.holding is None
            and state.location_of(args[0]) == state.agent_location
        )
    if verb == "put":
        return (
            len(args) == 2
            and state.holding == args[0]
            and args[1] == state.agent_location
            and args[1] in task.layout.locations
        )
    if verb in ("clean", "heat", "cool"):
        attr = {"clean": "clean", "heat": "hot", "cool": "cold"}[verb]
        return (
            len(args) == 1
            and state.holding == args[0]
            and state.agent_location == STATIONS[attr]
        )
    if verb == "examine":
        return (
            len(args) == 1
            and state.holding == args[0]
            and state.agent_location == STATIONS["examined"]
            and state.light_on
        )
    if verb == "toggle":
        return len(args) == 1 and args[0] == LAMP and state.agent_location == STATIONS["examined"]
    return False


def _apply(state: EnvState, action: Action) -> EnvState:
    """Physical effect of an admissible action (no latching, no counters)."""
    verb, args = action.verb, action.args
    if verb == "noop":
        return state
    if verb == "goto":
        return replace(state, agent_location=args[0])
    if verb == "take":
        locs = tuple((o, l) for o, l in state.object_locations if o != args[0])
        return replace(state, object_locations=locs, holding=args[0])
    if verb == "put":
        locs = tuple(sorted(state.object_locations + ((args[0], args[1]),)))
        return replace(state, object_locations=locs, holding=None)
    if verb in ("clean", "heat", "cool", "examine"):
        gain = {"clean": "clean", "heat": "hot", "cool": "cold", "examine": "examined"}[verb]
        drop = {"heat": "cold", "cool": "hot"}.get(verb)
        attrs = set(state.attrs_of(args[0]))
        attrs.add(gain)
        if drop:
            attrs.discard(drop)
        others = tuple((o, a) for o, a in state.object_attrs if o != args[0])
        updated = tuple(sorted(others + ((args[0], tuple(sorted(attrs))),)))
        return replace(state, object_attrs=updated)
    if verb == "toggle":
        return replace(state, light_on=not state.light_on)
    raise ValueError(f"unknown verb {verb}")


def env_step(state: EnvState, action: Action, task: TaskSpec) -> StepOutcome:
    """Execute one action; pure in (state, action, task)."""
    if state.step_count >= task.max_steps:
        raise StepLimitExceeded(f"step_count {state.step_count} >= max_steps {task.max_steps}")
    step = state.step_count + 1
    hit_limit = step >= task.max_steps
    if not _is_admissible(state, action, task):
        nxt = replace(state, step_count=step)
        return StepOutcome(nxt, NOTHING_HAPPENED, 0.0, hit_limit, False)
    moved = _apply(state, action)
    bits = _latch_subgoals(replace(moved, step_count=step), task)
    nxt = replace(moved, satisfied_subgoals=bits, step_count=step)
    success = all(bits) and not all(state.satisfied_subgoals)
    reward = 1.0 if success else 0.0
    done = success or hit_limit
    return StepOutcome(nxt, state_to_string(nxt), reward, done, True)


def admissible_actions(state: EnvState, task: TaskSpec) -> list[Action]:
    """All actions valid in this state, in canonical (lexicographic) order."""
    return [a for a in action_vocabulary(task) if _is_admissible(state, a, task)]


# --------------------------------------------------------------------------
# expert planning
# --------------------------------------------------------------------------


def _relevant_attr_pairs(task: TaskSpec) -> set[tuple[str, str]]:
    """(object, attribute) pairs that some goal predicate actually reads."""
    pairs: set[tuple[str, str]] = set()
    if task.goal.required_attr:
        for t in task.goal.targets:
            pairs.add((t, task.goal.required_attr))
    for link in task.goal.chain:
        if link.kind == "attr":
            pairs.add((link.obj, link.target))
    return pairs


def _search_actions(task: TaskSpec) -> list[Action]:
    """Action set sufficient for optimal plans.

    Non-goal objects never gate a goal predicate or the admissibility of a
    goal-relevant action, attribute values gate no admissibility at all, and
    the light matters only to examine; so ops outside this set (and noop) can
    be deleted from any plan without breaking it.
    """
    cached = getattr(task, "_search_cache", None)
    if cached is not None:
        return cached
    goal_objs = set(_goal_objects(task))
    attr_pairs = _relevant_attr_pairs(task)
    verb_for = {"clean": "clean", "hot": "heat", "cold": "cool", "examined": "examine"}
    needs_light = any(attr == "examined" for _, attr in attr_pairs)
    acts = []
    for loc in task.layout.locations:
        acts.append(Action("goto", (loc,)))
    for obj in sorted(goal_objs):
        acts.append(Action("take", (obj,)))
        for loc in task.layout.locations:
            acts.append(Action("put", (obj, loc)))
    for obj, attr in attr_pairs:
        acts.append(Action(verb_for[attr], (obj,)))
    if needs_light:
        acts.append(Action("toggle", (LAMP,)))
    return _memoize_on_task(task, "_search_cache", sorted(acts, key=str))


def expert_plan(state: EnvState, task: TaskSpec) -> list[Action]:
    """Shortest action sequence to the goal; BFS with canonical tie-breaking."""
    if all(state.satisfied_subgoals):
        return []
    budget = task.max_steps - state.step_count
    if budget <= 0:
        raise Unsolvable("no steps remaining")
    actions = _search_actions(task)
    start = replace(state, step_count=0)
    frontier = deque([(start, 0)])
    parents: dict[EnvState, tuple[EnvState, Action] | None] = {start: None}
    while frontier:
        current, depth = frontier.popleft()
        if depth >= budget:
            continue
        for action in actions:
            if not _is_admissible(current, action, task):
                continue
            nxt = _apply(current, action)
            bits = _latch_subgoals(nxt, task)
            nxt = replace(nxt, satisfied_subgoals=bits)
            if nxt in parents:
                continue
            parents[nxt] = (current, action)
            if all(bits):
                plan: list[Action] = [action]
                back = current
                while parents[back] is not None:
                    prev, act = parents[back]
                    plan.append(act)
                    back = prev
                plan.reverse()
                return plan
            frontier.append((nxt, depth + 1))
    raise Unsolvable(f"goal unreachable within {budget} steps")
