"""Execute experiment configs into CSV result rows.

Work is split into independent cells.  Each cell writes its rows to its own
temporary CSV; the files are merged and sorted by key at the end, so output
bytes do not depend on worker count or completion order.
"""
from __future__ import annotations

import logging
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import algorithms as alg
from ..baselines import retrace_weight_profile
from ..envs import TOY_TASKS
from ..mdp import PolicySet, epsilon_greedy, greedy_policy, q_star_oracle, random_mdp, uniform_policy
from ..operators import (HighwayConfig, LookaheadSet, bellman_optimality, broken_gate_variant,
                         fixed_point, gate_choices, highway_generalized, highway_optimality,
                         highway_softmax, multistep_bo)
from ..rng import run_key, stream
from .config import ExperimentConfig, multiroom_mdp, resolve_env
from .presets import AGENT_DEFAULTS, HQL_DEFAULTS, HVI_DEFAULTS, PI_EVAL_DEPTH
from .schema import ResultRow, read_csv, sort_key, write_csv

log = logging.getLogger(__name__)


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> list[ResultRow]:
    """Run every cell of ``cfg``; write the merged CSV to ``out`` (or ``cfg.out``)."""
    cells = list(_cells(cfg))
    with tempfile.TemporaryDirectory(prefix="highway-") as tmp:
        paths = [Path(tmp) / f"cell-{i:05d}.csv" for i in range(len(cells))]
        jobs = [(cfg, cell, str(p)) for cell, p in zip(cells, paths)]
        failures = []
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for (c, cell, _), err in zip(jobs, pool.map(_run_cell, jobs)):
                    if err:
                        failures.append((cell, err))
        else:
            for job in jobs:
                err = _run_cell(job)
                if err:
                    failures.append((job[1], err))
        rows = []
        for p in paths:
            if p.exists():
                rows.extend(read_csv(p))
    rows.sort(key=sort_key)
    target = out or cfg.out
    if target:
        write_csv(rows, target)
    if failures:
        detail = "; ".join(f"{cell}: {err}" for cell, err in failures)
        raise RuntimeError(f"{len(failures)} cell(s) failed ({detail}); partial results kept")
    return rows


def _run_cell(job) -> str | None:
    cfg, cell, path = job
    try:
        rows = CELL_RUNNERS[cfg.kind](cfg, cell)
    except Exception as exc:  # noqa: BLE001 - reported per cell, other cells still flush
        log.exception("cell %s failed", cell)
        return f"{type(exc).__name__}: {exc}"
    write_csv(rows, path)
    return None


def _cells(cfg: ExperimentConfig):
    spec = cfg.spec
    if cfg.kind == "toy_tasks":
        for delay in spec["delays"]:
            for agent in spec["agents"]:
                for seed in cfg.seeds:
                    yield (delay, agent, seed)
    elif cfg.kind == "multiroom":
        for rooms in spec["rooms"]:
            for name in spec["algorithms"]:
                yield (rooms, name)
    elif cfg.kind in ("fixed_point", "convergence_iters"):
        for op in spec["operators"]:
            yield (op,)
    elif cfg.kind == "retrace_profile":
        for seed in cfg.seeds:
            yield (seed,)
    else:
        yield ()


# ---------------------------------------------------------------------------
# Planning experiments


def _policy_set(cfg: ExperimentConfig, env) -> tuple[list[str], PolicySet]:
    names = cfg.spec.get("policies") or (list(env.policies) or ["uniform"])
    pols = []
    for name in names:
        if name in env.policies:
            pols.append(env.policies[name])
        elif name == "uniform":
            pols.append(uniform_policy(env.mdp.num_states, env.mdp.num_actions))
        elif name == "optimal":
            pols.append(greedy_policy(q_star_oracle(env.mdp)))
        else:
            raise ValueError(f"unknown policy {name!r}")
    return names, PolicySet(tuple(pols))


def _lookahead(spec: dict, n: int) -> LookaheadSet:
    return LookaheadSet.range(1, n) if spec.get("depth_mode") == "range" else LookaheadSet((n,))


def operator_for(name: str, mdp, pset: PolicySet, la: LookaheadSet, spec: dict):
    if name == "bellman_optimality":
        return lambda q: bellman_optimality(mdp, q)
    if name == "multistep_bo":
        cfg = HighwayConfig(pset, la)
        return lambda q: multistep_bo(mdp, cfg, q)
    if name == "highway_generalized":
        cfg = HighwayConfig(pset, la)
        return lambda q: highway_generalized(mdp, cfg, q)
    if name == "highway_optimality":
        return lambda q: highway_optimality(mdp, pset, la, q)
    if name == "highway_softmax":
        alpha = float(spec.get("alpha", 1.0))
        cfg = HighwayConfig(pset, la, 1, "smax", "smax", alpha)
        return lambda q: highway_softmax(mdp, cfg, q)
    if name == "broken_gate":
        cfg = HighwayConfig(pset, la, int(spec.get("gate_threshold", 0)))
        return lambda q: broken_gate_variant(mdp, cfg, q)
    raise ValueError(f"unknown operator {name!r}")


def _fixed_point_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    (op,) = cell
    env = resolve_env(cfg.env)
    _, pset = _policy_set(cfg, env)
    q_star = q_star_oracle(env.mdp)
    tol = float(cfg.spec.get("tol", 1e-10))
    s, a = env.probe
    rows = []
    trace = cfg.kind == "convergence_iters"
    for n in cfg.spec["depths"]:
        K = operator_for(op, env.mdp, pset, _lookahead(cfg.spec, n), cfg.spec)
        rep = fixed_point(K, np.zeros_like(q_star), tol=tol, record=trace)
        flag = int(rep.converged)
        common = dict(experiment=cfg.experiment, env=env.name, algorithm=op, seed=0, x=float(n), flag=flag)
        rows.append(ResultRow(metric="iterations", y=float(rep.iterations), **common))
        if trace:
            for k, res in enumerate(rep.history, start=1):
                rows.append(ResultRow(cfg.experiment, env.name, f"{op}@n={n}", 0, "residual",
                                      float(k), res, flag))
            continue
        rows.append(ResultRow(metric="q_probe", y=float(rep.q[s, a]), **common))
        rows.append(ResultRow(metric="greedy_probe", y=float(np.argmax(rep.q[s])), **common))
        rows.append(ResultRow(metric="value_error", y=float(np.abs(rep.q - q_star).max()), **common))
    return rows


def _gate_trace_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    env = resolve_env(cfg.env)
    names, pset = _policy_set(cfg, env)
    n = int(cfg.spec["depth"])
    hcfg = HighwayConfig(pset, LookaheadSet((n,)))
    s, a = env.probe
    q = np.zeros((env.mdp.num_states, env.mdp.num_actions))
    rows = []
    max_iters = int(cfg.spec.get("max_iters", 1000))
    for k in range(1, max_iters + 1):
        choice = gate_choices(env.mdp, hcfg, q)
        for i, name in enumerate(names):
            rows.append(ResultRow(cfg.experiment, env.name, name, 0, "gate_choice",
                                  float(k), float(choice[i, 0, s, a])))
        new = highway_generalized(env.mdp, hcfg, q)
        done = np.abs(new - q).max() <= float(cfg.spec.get("tol", 1e-10))
        q = new
        if done:
            break
    return rows


def _multiroom_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    rooms, name = cell
    mr = multiroom_mdp(rooms, int(cfg.spec["room_size"]), float(cfg.spec.get("discount", 0.99)))
    eps = float(cfg.spec.get("error_bound", HVI_DEFAULTS.error_bound))
    if name == "value_iteration":
        rep = alg.value_iteration(mr.mdp, tol=eps)
    elif name == "policy_iteration":
        rep = alg.policy_iteration(mr.mdp, eval_depth=PI_EVAL_DEPTH, tol=eps)
    else:
        rep = alg.highway_value_iteration(mr.mdp, replace(HVI_DEFAULTS, error_bound=eps))
    v_star = q_star_oracle(mr.mdp).max(axis=1)
    err = float(np.abs(rep.v - v_star).max())
    env_id = f"multiroom-{rooms}"
    flag = int(rep.converged and err <= 10 * eps)
    rows = [ResultRow(cfg.experiment, env_id, name, 0, metric, float(rooms), y, flag)
            for metric, y in (("iterations", rep.iterations), ("samples", rep.samples),
                              ("value_error", err))]
    return rows


# ---------------------------------------------------------------------------
# Learning experiments


def toy_run(task: str, delay: int, agent: str, seed, agent_params=None, hql_params=None):
    env = TOY_TASKS[task](delay)
    if agent == "highway_q":
        return alg.highway_q_learning(env, hql_params or HQL_DEFAULTS, seed)
    return alg.AGENTS[agent](env, agent_params or AGENT_DEFAULTS, seed)


def _toy_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    delay, agent, seed = cell
    budget = int(cfg.spec.get("budget", AGENT_DEFAULTS.budget))
    ap = replace(AGENT_DEFAULTS, budget=budget)
    hp = replace(HQL_DEFAULTS, run_epochs=budget)
    result = toy_run(cfg.spec["task"], delay, agent, run_key(cfg.experiment, seed), ap, hp)
    solved = alg.episodes_to_solve(result)
    env_id = f"{cfg.spec['task']}-{delay}"
    y = float("inf") if solved is None else float(solved)
    rows = [ResultRow(cfg.experiment, env_id, agent, seed, "episodes_to_solve", float(delay), y,
                      int(solved is not None))]
    if cfg.spec.get("trace"):
        rows += [ResultRow(cfg.experiment, env_id, agent, seed, "greedy_optimal", float(e), float(ok))
                 for e, ok in result.evaluations]
    return rows


def _retrace_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    (seed,) = cell
    spec = cfg.spec
    A = int(spec.get("num_actions", 4))
    S = int(spec.get("num_states", 10))
    steps = int(spec["steps"])
    rng = stream(run_key(cfg.experiment, seed))
    mdp = random_mdp(rng, S, A, 0.9)
    q = rng.normal(size=(S, A))
    target = greedy_policy(q)
    behavior = epsilon_greedy(q, float(spec.get("epsilon", 0.2)))
    s = 0
    traj = []
    for _ in range(steps):
        act = int(rng.choice(A, p=behavior[s]))
        traj.append((s, act))
        s = int(rng.choice(S, p=mdp.transition[s, act]))
    rows = []
    for lam in spec["lams"]:
        w = retrace_weight_profile(target, behavior, traj, float(lam))
        rows += [ResultRow(cfg.experiment, "random", f"retrace-lambda-{lam:g}", seed,
                           "retrace_weight", float(t), float(v)) for t, v in enumerate(w)]
    return rows


def _property_cell(cfg: ExperimentConfig, cell) -> list[ResultRow]:
    from .checks import CHECKS
    result = CHECKS[cfg.spec["suite"]]()
    return result.rows(cfg.experiment)


CELL_RUNNERS = {
    "fixed_point": _fixed_point_cell,
    "convergence_iters": _fixed_point_cell,
    "gate_trace": _gate_trace_cell,
    "multiroom": _multiroom_cell,
    "toy_tasks": _toy_cell,
    "retrace_profile": _retrace_cell,
    "property_suite": _property_cell,
}
