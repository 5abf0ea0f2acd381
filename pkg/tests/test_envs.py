import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lookahead_lab.envs import (
    HOUSE_FAMILIES,
    NOTHING_HAPPENED,
    Action,
    EnvState,
    Family,
    GoalDescriptor,
    InstanceLayout,
    StepLimitExceeded,
    TaskSpec,
    action_vocabulary,
    admissible_actions,
    env_step,
    expert_plan,
    parse_action,
    reset,
    sample_task,
    state_from_string,
    state_to_string,
    subgoal_progress,
)

from .oracles import bidirectional_distance, enumerate_reachable, full_bfs_distance, oracle_step


def make_task(family, locations, objects, placement, agent, targets,
              destination=None, required_attr=None, chain=(), max_steps=20):
    """Hand-built task instance for controlled tests."""
    layout = InstanceLayout(
        locations=tuple(sorted(locations)),
        objects=tuple(sorted(objects)),
        initial_object_locations=tuple(sorted(placement.items())),
        initial_agent_location=agent,
    )
    goal = GoalDescriptor(tuple(targets), destination, required_attr, tuple(chain))
    return TaskSpec(Family(family), goal, 0, max_steps, layout)


@pytest.fixture
def two_room_heat():
    # tiny instance: heating a mug and parking it on the table
    return make_task(
        Family.HEAT,
        locations=("microwave", "diningtable"),
        objects=("mug1",),
        placement={"mug1": "diningtable"},
        agent="microwave",
        targets=("mug1",),
        destination="diningtable",
        required_attr="hot",
        max_steps=12,
    )


class TestSampling:
    def test_sample_is_deterministic(self):
        a = sample_task(Family.PICK, 7)
        b = sample_task(Family.PICK, 7)
        assert a == b

    def test_pick2_goal_lists_two_objects_of_same_type(self):
        for seed in range(10):
            task = sample_task(Family.PICK2, seed)
            assert len(task.goal.targets) == 2
            t1, t2 = task.goal.targets
            assert t1.rstrip("12") == t2.rstrip("12")

    def test_lab_chain_length_echo(self):
        task = sample_task(Family.LAB_CHAIN, 11, chain_len=6)
        assert len(task.goal.chain) == 6
        state, _ = reset(task)
        assert len(state.satisfied_subgoals) == 6

    def test_instance_sizing(self):
        for seed in range(5):
            for fam in HOUSE_FAMILIES:
                task = sample_task(fam, seed)
                assert 4 <= len(task.layout.locations) <= 8
                assert 3 <= len(task.layout.objects) <= 7

    def test_max_steps_covers_plan(self):
        for seed in range(5):
            for fam in HOUSE_FAMILIES:
                task = sample_task(fam, seed)
                state, _ = reset(task)
                assert len(expert_plan(state, task)) <= task.max_steps


class TestReset:
    def test_reset_is_deterministic(self):
        task = sample_task(Family.CLEAN, 3)
        s1, o1 = reset(task)
        s2, o2 = reset(task)
        assert s1 == s2 and o1 == o2

    def test_observation_is_canonical_string(self):
        task = sample_task(Family.COOL, 5)
        state, obs = reset(task)
        assert obs == state_to_string(state)

    def test_no_subgoal_satisfied_at_reset_for_100_tasks(self):
        families = list(HOUSE_FAMILIES) + [Family.LAB_CHAIN]
        count = 0
        for seed in range(15):
            for fam in families:
                task = sample_task(fam, seed)
                state, _ = reset(task)
                assert not any(state.satisfied_subgoals), (fam, seed)
                assert subgoal_progress(state, task) == 0.0
                count += 1
        assert count >= 100


class TestCanonicalString:
    def test_round_trip(self):
        task = sample_task(Family.PICK, 9)
        state, _ = reset(task)
        plan = expert_plan(state, task)
        for action in plan:
            out = env_step(state, action, task)
            state = out.next_state
            back = state_from_string(state_to_string(state), step_count=state.step_count)
            assert back == state

    def test_injective_over_reachable_states(self, two_room_heat):
        states, _ = enumerate_reachable(two_room_heat)
        strings = {state_to_string(s) for s in states}
        assert len(strings) == len(states)


class TestStep:
    def test_take_while_holding_nothing_happened(self):
        task = make_task(
            Family.PICK,
            locations=("cabinet", "diningtable"),
            objects=("mug1", "pan1"),
            placement={"mug1": "cabinet", "pan1": "cabinet"},
            agent="cabinet",
            targets=("mug1",),
            destination="diningtable",
        )
        state, _ = reset(task)
        state = env_step(state, parse_action("take pan1"), task).next_state
        out = env_step(state, parse_action("take mug1"), task)
        assert not out.valid
        assert out.observation == NOTHING_HAPPENED
        assert out.reward == 0.0
        assert state_to_string(out.next_state) == state_to_string(state)
        assert out.next_state.step_count == state.step_count + 1

    def test_final_put_completes_pick(self):
        task = sample_task(Family.PICK, 2)
        state, _ = reset(task)
        plan = expert_plan(state, task)
        for action in plan[:-1]:
            out = env_step(state, action, task)
            assert out.reward == 0.0 and not out.done
            state = out.next_state
        out = env_step(state, plan[-1], task)
        assert out.reward == 1.0 and out.done
        assert plan[-1].verb == "put"

    def test_heat_at_microwave_gains_hot(self, two_room_heat):
        task = two_room_heat
        state, _ = reset(task)
        state = env_step(state, parse_action("goto diningtable"), task).next_state
        state = env_step(state, parse_action("take mug1"), task).next_state
        state = env_step(state, parse_action("goto microwave"), task).next_state
        out = env_step(state, parse_action("heat mug1"), task)
        assert out.valid
        assert "hot" in out.next_state.attrs_of("mug1")

    def test_step_limit_raises_when_exhausted(self, two_room_heat):
        task = two_room_heat
        state, _ = reset(task)
        for _ in range(task.max_steps):
            state = env_step(state, Action("noop"), task).next_state
        with pytest.raises(StepLimitExceeded):
            env_step(state, Action("noop"), task)

    def test_timeout_yields_done_without_reward(self, two_room_heat):
        task = two_room_heat
        state, _ = reset(task)
        out = None
        for _ in range(task.max_steps):
            out = env_step(state, Action("noop"), task)
            state = out.next_state
        assert out.done and out.reward == 0.0

    def test_transition_table_matches_oracle_on_two_room_instance(self, two_room_heat):
        task = two_room_heat
        states, _ = enumerate_reachable(task)
        assert len(states) <= 10_000
        vocab = action_vocabulary(task)
        checked = 0
        for state in states:
            for action in vocab:
                got = env_step(state, action, task)
                want_state, want_r, want_done, want_valid = oracle_step(state, action, task)
                assert got.next_state == want_state
                assert got.reward == want_r
                assert got.done == want_done
                assert got.valid == want_valid
                checked += 1
        assert checked == len(states) * len(vocab)


class TestAdmissible:
    def test_no_take_when_location_empty(self):
        task = make_task(
            Family.PICK,
            locations=("cabinet", "diningtable", "shelf"),
            objects=("mug1",),
            placement={"mug1": "cabinet"},
            agent="shelf",
            targets=("mug1",),
            destination="diningtable",
        )
        state, _ = reset(task)
        acts = admissible_actions(state, task)
        verbs = {a.verb for a in acts}
        assert "take" not in verbs
        gotos = {a.args[0] for a in acts if a.verb == "goto"}
        assert gotos == {"cabinet", "diningtable"}

    def test_admissible_means_valid_and_exhaustive(self, two_room_heat):
        task = two_room_heat
        states, _ = enumerate_reachable(task)
        for state in states:
            listed = admissible_actions(state, task)
            for action in listed:
                assert env_step(state, action, task).valid
            listed_set = set(map(str, listed))
            for action in action_vocabulary(task):
                valid = env_step(state, action, task).valid
                assert valid == (str(action) in listed_set)

    def test_sorted_lexicographically(self):
        task = sample_task(Family.LOOK, 4)
        state, _ = reset(task)
        acts = [str(a) for a in admissible_actions(state, task)]
        assert acts == sorted(acts)


class TestExpertPlan:
    def test_four_step_pick_plan(self):
        task = make_task(
            Family.PICK,
            locations=("cabinet", "diningtable", "sinkbasin"),
            objects=("mug1",),
            placement={"mug1": "cabinet"},
            agent="sinkbasin",
            targets=("mug1",),
            destination="diningtable",
        )
        state, _ = reset(task)
        plan = [str(a) for a in expert_plan(state, task)]
        assert plan == ["goto cabinet", "take mug1", "goto diningtable", "put mug1 diningtable"]

    def test_empty_plan_when_goal_already_satisfied(self):
        task = sample_task(Family.PICK, 13)
        state, _ = reset(task)
        for action in expert_plan(state, task):
            state = env_step(state, action, task).next_state
        assert expert_plan(state, task) == []

    def test_plan_length_matches_full_bfs_oracle_on_50_pick_instances(self):
        for seed in range(50):
            task = sample_task(Family.PICK, seed)
            state, _ = reset(task)
            plan = expert_plan(state, task)
            assert len(plan) == full_bfs_distance(task), seed

    def test_plan_length_matches_bidirectional_oracle_on_small_instances(self):
        for seed in range(6):
            task = make_task(
                Family.HEAT,
                locations=("microwave", "diningtable", "shelf"),
                objects=("mug1", "pan1"),
                placement={"mug1": ("shelf", "diningtable")[seed % 2], "pan1": "microwave"},
                agent=("microwave", "shelf")[seed % 2],
                targets=("mug1",),
                destination="shelf" if seed % 3 else "diningtable",
                required_attr="hot",
            )
            state, _ = reset(task)
            if state.location_of("mug1") == task.goal.destination:
                continue
            states, _ = enumerate_reachable(task)
            assert len(states) <= 10_000
            assert len(expert_plan(state, task)) == bidirectional_distance(task)

    def test_plan_executes_to_success(self):
        for fam in HOUSE_FAMILIES:
            task = sample_task(fam, 21)
            state, _ = reset(task)
            total = 0.0
            last_progress = 0.0
            for action in expert_plan(state, task):
                out = env_step(state, action, task)
                assert out.valid
                state = out.next_state
                progress = subgoal_progress(state, task)
                assert progress >= last_progress  # monotone along expert plan
                last_progress = progress
                total += out.reward
            assert total == 1.0


class TestInvariants:
    def test_trajectory_determinism(self):
        task = sample_task(Family.PICK2, 17)
        runs = []
        for _ in range(2):
            state, _ = reset(task)
            trace = []
            for action in expert_plan(state, task):
                out = env_step(state, action, task)
                trace.append((state_to_string(out.next_state), out.reward, out.done))
                state = out.next_state
            runs.append(trace)
        assert runs[0] == runs[1]

    @given(st.integers(min_value=0, max_value=10_000), st.data())
    @settings(max_examples=25, deadline=None)
    def test_invalid_action_fixpoint(self, seed, data):
        task = sample_task(Family.PICK, seed % 37)
        state, _ = reset(task)
        vocab = action_vocabulary(task)
        admissible = set(map(str, admissible_actions(state, task)))
        invalid = [a for a in vocab if str(a) not in admissible]
        action = data.draw(st.sampled_from(invalid))
        out = env_step(state, action, task)
        assert not out.valid
        assert state_to_string(out.next_state) == state_to_string(state)
        assert out.next_state.step_count == state.step_count + 1

    def test_closure_and_reward_range(self):
        task = sample_task(Family.CLEAN, 23)
        state, _ = reset(task)
        total = 0.0
        done = False
        while not done:
            acts = admissible_actions(state, task)
            assert acts
            out = env_step(state, acts[0], task)
            assert 0.0 <= out.reward <= 1.0
            total += out.reward
            state, done = out.next_state, out.done
        assert total in (0.0, 1.0)


class TestSerialization:
    def test_task_json_round_trip(self):
        import json

        from lookahead_lab.envs import task_from_json

        for fam in (Family.PICK, Family.LAB_CHAIN):
            task = sample_task(fam, 31)
            wire = json.loads(json.dumps(task.to_json()))
            assert task_from_json(wire) == task
