"""Lookahead horizon controllers: how many imagined steps to take per decision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agent, envs


class ControllerKind:
    REACTIVE = "Reactive"
    FIXED = "Fixed"
    RANDOM_UNIFORM = "RandomUniform"
    HEURISTIC_ADAPTIVE = "HeuristicAdaptive"
    LEARNED_ADAPTIVE = "LearnedAdaptive"


@dataclass(frozen=True)
class LookaheadController:
    kind: str
    fixed_k: int | None = None
    mode: str = "argmax"  # LearnedAdaptive only: "argmax" | "sample"

    def __post_init__(self):
        if self.kind == ControllerKind.FIXED and self.fixed_k is None:
            raise ValueError("Fixed controller needs fixed_k")

    def label(self) -> str:
        if self.kind == ControllerKind.FIXED:
            return f"fixed:{self.fixed_k}"
        return self.kind.lower()


def reactive() -> LookaheadController:
    return LookaheadController(ControllerKind.REACTIVE)


def fixed(k: int) -> LookaheadController:
    return LookaheadController(ControllerKind.FIXED, fixed_k=k)


def random_uniform() -> LookaheadController:
    return LookaheadController(ControllerKind.RANDOM_UNIFORM)


def heuristic_adaptive() -> LookaheadController:
    return LookaheadController(ControllerKind.HEURISTIC_ADAPTIVE)


def learned_adaptive(mode: str = "argmax") -> LookaheadController:
    return LookaheadController(ControllerKind.LEARNED_ADAPTIVE, mode=mode)


def select_k(
    controller: LookaheadController,
    params: agent.AgentParams,
    state: envs.EnvState,
    task: envs.TaskSpec,
    rng: np.random.Generator,
) -> int:
    """Pick this step's imagination horizon."""
    kind = controller.kind
    if kind == ControllerKind.REACTIVE:
        return 0
    if kind == ControllerKind.FIXED:
        if not 0 <= controller.fixed_k <= params.K_max:
            raise ValueError(f"fixed_k {controller.fixed_k} outside [0, {params.K_max}]")
        return controller.fixed_k
    if kind == ControllerKind.RANDOM_UNIFORM:
        return int(rng.integers(0, params.K_max + 1))
    if kind == ControllerKind.HEURISTIC_ADAPTIVE:
        remaining = 1.0 - envs.subgoal_progress(state, task)
        k = int(np.floor(remaining * params.K_max + 0.5))
        return max(0, min(params.K_max, k))
    if kind == ControllerKind.LEARNED_ADAPTIVE:
        dist = agent.k_distribution(params, state, task)
        if controller.mode == "sample":
            return int(rng.choice(len(dist), p=dist))
        return int(np.argmax(dist))
    raise ValueError(f"unknown controller kind {kind}")


def parse_controller(text: str) -> LookaheadController:
    """Parse CLI-form controller names: reactive|fixed:K|random|heuristic|learned."""
    if text == "reactive":
        return reactive()
    if text.startswith("fixed:"):
        return fixed(int(text.split(":", 1)[1]))
    if text == "random":
        return random_uniform()
    if text == "heuristic":
        return heuristic_adaptive()
    if text == "learned":
        return learned_adaptive()
    raise ValueError(f"unknown controller spec {text!r}")
