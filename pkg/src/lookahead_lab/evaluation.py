"""Success-rate and compute-budget measurement across horizon controllers.

Every comparison runs on an identical (task, episode-seed) grid so that
controller differences are paired, and budgets normalize affinely between the
fixed-horizon endpoints k=0 and k=K_max.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agent, envs
from .controllers import (
    ControllerKind,
    LookaheadController,
    fixed,
    learned_adaptive,
    random_uniform,
    select_k,
)
from .imagination import BudgetMeter, PolicyCache, poimdp_step
from .rng import make_rng

__all__ = [
    "LookaheadController",
    "EpisodeResult",
    "SweepReport",
    "select_k",
    "run_episode",
    "success_rate",
    "normalized_budget",
    "sweep_fixed_k",
    "ablation_no_rt",
    "paired_bootstrap_ci",
]


class EvaluationError(Exception):
    pass


class EmptyResults(EvaluationError):
    pass


class DegenerateEndpoints(EvaluationError):
    pass


@dataclass(frozen=True)
class EpisodeResult:
    task_family: str
    success: bool
    steps: int
    total_budget_units: float
    per_step_k: tuple[int, ...]
    seed: int


@dataclass
class SweepReport:
    per_k: dict  # k -> {"sr": float, "budget": float, "nb": float}
    adaptive: dict
    random: dict
    n_episodes: int
    n_seeds: int


def run_episode(
    task: envs.TaskSpec,
    params: agent.AgentParams,
    wm,
    controller: LookaheadController,
    seed: int,
) -> EpisodeResult:
    """Play one episode under a controller; deterministic given all inputs."""
    rng = make_rng(seed, "episode")
    meter = BudgetMeter()
    cache = PolicyCache(params, task)
    state, _ = envs.reset(task)
    per_step_k: list[int] = []
    success = False
    done = False
    steps = 0
    while not done:
        rec = poimdp_step(params, wm, state, task, controller, meter, rng, cache=cache)
        per_step_k.append(rec.sampled_k)
        steps += 1
        success = success or rec.env_reward == 1.0
        state, done = rec.next_state, rec.done
    return EpisodeResult(
        task_family=task.family.value,
        success=success,
        steps=steps,
        total_budget_units=meter.total,
        per_step_k=tuple(per_step_k),
        seed=seed,
    )


def run_grid(
    params: agent.AgentParams,
    wm,
    tasks: list[envs.TaskSpec],
    seeds: list[int],
    controller: LookaheadController,
) -> list[EpisodeResult]:
    """Evaluate one controller over the full paired (task, seed) grid."""
    results = []
    for task in tasks:
        for seed in seeds:
            results.append(run_episode(task, params, wm, controller, seed))
    return results


def success_rate(results: list[EpisodeResult]):
    """(overall SR, per-family SR) over a result set."""
    if not results:
        raise EmptyResults("no episodes to score")
    overall = sum(r.success for r in results) / len(results)
    per_family: dict[str, float] = {}
    for fam in sorted({r.task_family for r in results}):
        subset = [r for r in results if r.task_family == fam]
        per_family[fam] = sum(r.success for r in subset) / len(subset)
    return overall, per_family


def mean_budget(results: list[EpisodeResult]) -> float:
    if not results:
        raise EmptyResults("no episodes to average")
    return float(np.mean([r.total_budget_units for r in results]))


def normalized_budget(mean_budget_at_k: dict, k_max: int) -> dict:
    """Affine rescale of mean budgets so k=0 maps to 0 and k=K_max maps to 1."""
    if 0 not in mean_budget_at_k or k_max not in mean_budget_at_k:
        raise DegenerateEndpoints("need budgets at k=0 and k=K_max")
    lo, hi = mean_budget_at_k[0], mean_budget_at_k[k_max]
    if hi <= lo:
        raise DegenerateEndpoints(f"budget at K_max ({hi}) must exceed budget at 0 ({lo})")
    return {k: (b - lo) / (hi - lo) for k, b in mean_budget_at_k.items()}


def normalize_against(value: float, mean_budget_at_k: dict, k_max: int) -> float:
    """Place a non-fixed controller's budget on the fixed sweep's NB axis."""
    lo, hi = mean_budget_at_k[0], mean_budget_at_k[k_max]
    if hi <= lo:
        raise DegenerateEndpoints("degenerate fixed-sweep endpoints")
    return (value - lo) / (hi - lo)


def sweep_fixed_k(
    params: agent.AgentParams,
    wm,
    tasks: list[envs.TaskSpec],
    seeds: list[int],
) -> SweepReport:
    """Fixed(0..K_max) plus learned-adaptive and random on one shared grid."""
    if params.K_max < 2:
        raise ValueError("sweep needs K_max >= 2")
    per_k_results = {
        k: run_grid(params, wm, tasks, seeds, fixed(k)) for k in range(params.K_max + 1)
    }
    adaptive_results = run_grid(params, wm, tasks, seeds, learned_adaptive())
    random_results = run_grid(params, wm, tasks, seeds, random_uniform())

    budgets = {k: mean_budget(res) for k, res in per_k_results.items()}
    nbs = normalized_budget(budgets, params.K_max)
    per_k = {
        k: {
            "sr": success_rate(res)[0],
            "budget": budgets[k],
            "nb": nbs[k],
            "results": res,
        }
        for k, res in per_k_results.items()
    }

    def controller_row(results):
        return {
            "sr": success_rate(results)[0],
            "budget": mean_budget(results),
            "nb": normalize_against(mean_budget(results), budgets, params.K_max),
            "results": results,
        }

    return SweepReport(
        per_k=per_k,
        adaptive=controller_row(adaptive_results),
        random=controller_row(random_results),
        n_episodes=len(tasks) * len(seeds),
        n_seeds=len(seeds),
    )


def paired_bootstrap_ci(
    wins_a: list[float],
    wins_b: list[float],
    n_resamples: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
):
    """Percentile CI of mean(a - b) over paired per-episode outcomes."""
    if len(wins_a) != len(wins_b) or not wins_a:
        raise ValueError("paired outcome lists must be equal-length and non-empty")
    diffs = np.asarray(wins_a, dtype=float) - np.asarray(wins_b, dtype=float)
    rng = make_rng(seed, "bootstrap")
    n = len(diffs)
    idx = rng.integers(0, n, size=(n_resamples, n))
    means = diffs[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(diffs.mean()), (float(lo), float(hi))


@dataclass
class AblationReport:
    sr_full: float
    sr_no_rt: float
    difference: float
    ci_low: float
    ci_high: float
    n_episodes: int


def ablation_no_rt(
    stage3_params: agent.AgentParams,
    stage2_params: agent.AgentParams,
    wm,
    tasks: list[envs.TaskSpec],
    seeds: list[int],
    n_resamples: int = 10_000,
) -> AblationReport:
    """Paired comparison of the fully trained agent against its warm-up-only twin."""
    full = run_grid(stage3_params, wm, tasks, seeds, learned_adaptive())
    no_rt = run_grid(stage2_params, wm, tasks, seeds, learned_adaptive())
    wins_full = [1.0 if r.success else 0.0 for r in full]
    wins_no_rt = [1.0 if r.success else 0.0 for r in no_rt]
    diff, (lo, hi) = paired_bootstrap_ci(wins_full, wins_no_rt, n_resamples=n_resamples)
    return AblationReport(
        sr_full=success_rate(full)[0],
        sr_no_rt=success_rate(no_rt)[0],
        difference=diff,
        ci_low=lo,
        ci_high=hi,
        n_episodes=len(full),
    )


def eval_tasks(benchmark: str, n_tasks: int, seed: int, namespace: str = "eval"):
    """Deterministic task grid for a benchmark, round-robin over families."""
    from .rng import split_seed

    families = (
        list(envs.HOUSE_FAMILIES) if benchmark == "house" else [envs.Family.LAB_CHAIN]
    )
    tasks = []
    for i in range(n_tasks):
        fam = families[i % len(families)]
        tasks.append(envs.sample_task(fam, split_seed(seed, f"{namespace}-task:{i}")))
    return tasks


def fold_report(results: list[EpisodeResult], n_folds: int = 14):
    """Fold-averaged (SR, budget) pairs; episode i joins fold i mod n_folds."""
    folds = []
    for f in range(n_folds):
        subset = [r for i, r in enumerate(results) if i % n_folds == f]
        if subset:
            folds.append(
                {
                    "fold": f,
                    "sr": success_rate(subset)[0],
                    "budget": mean_budget(subset),
                    "n": len(subset),
                }
            )
    return folds
