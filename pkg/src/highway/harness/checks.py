"""Executable acceptance checks.

Each ``check_NN`` recomputes its claim from scratch and returns a
:class:`CheckResult`; nothing is cached between checks.  Tolerances are the
published ones and are never loosened here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import algorithms as alg
from ..baselines import TraceScheme, multistep_be_is, retrace_weight_profile, trace_operator
from ..envs import DOWN, UP, build_threefork
from ..mdp import (PolicySet, epsilon_greedy, greedy_policy, q_pi_oracle, q_star_oracle,
                   random_mdp)
from ..operators import (HighwayConfig, LookaheadSet, bellman_expectation, bellman_optimality,
                         broken_gate_variant, fixed_point, gate_choices, highway_generalized,
                         highway_optimality, highway_softmax, multistep_bo)
from ..rng import stream
from .config import ExperimentConfig, multiroom_mdp
from .presets import (HVI_DEFAULTS, MULTIROOM_ROOMS, MULTIROOM_SIZE, PRESETS, TOY_DELAYS)
from .schema import ResultRow

CHECK_SEED = 20240601


@dataclass
class CheckResult:
    id: str
    title: str
    passed: bool
    detail: str
    metrics: list[tuple[str, str, str, float, float, int]] = field(default_factory=list)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id} {self.title}: {self.detail}"

    def rows(self, experiment: str) -> list[ResultRow]:
        out = [ResultRow(experiment, env, algo, 0, metric, x, y, flag)
               for env, algo, metric, x, y, flag in self.metrics]
        out.append(ResultRow(experiment, "-", self.id, 0, "check", 0.0, float(self.passed),
                             int(self.passed)))
        return out


def _threefork():
    tf = build_threefork()
    return tf, PolicySet(tf.policies), q_star_oracle(tf.mdp)


def _solve(K, shape, tol=1e-10):
    rep = fixed_point(K, np.zeros(shape), tol=tol)
    if not rep.converged:
        raise RuntimeError(f"fixed point did not converge (residual {rep.residual:g})")
    return rep.q


# ---------------------------------------------------------------------------


def check_01() -> CheckResult:
    tf, pset, q_star = _threefork()
    s = tf.start
    ok = True
    values = []
    metrics = []
    for n in range(2, 11):
        cfg = HighwayConfig(pset, LookaheadSet((n,)))
        q = _solve(lambda x: multistep_bo(tf.mdp, cfg, x), q_star.shape)
        under = q[s, UP] < q_star[s, UP] - 1e-8
        flipped = q[s, DOWN] > q[s, UP] + 1e-8
        ok &= bool(under and flipped)
        values.append(f"n={n}:{q[s, UP]:.4g}")
        metrics.append(("threefork", "multistep_bo", "q_probe", float(n), float(q[s, UP]),
                        int(under and flipped)))
    return CheckResult("C01", "ThreeFork underestimation", ok,
                       f"Q*(S_A,up)={q_star[s, UP]:g}; " + " ".join(values), metrics)


def check_02() -> CheckResult:
    tf, _, q_star = _threefork()
    ok = True
    worst = -np.inf
    names = ("blue", "orange", "red")
    for name, pi in zip(names, tf.policies):
        pset = PolicySet((pi,))
        fp = {n: _solve(lambda x, c=HighwayConfig(pset, LookaheadSet((n,))): multistep_bo(tf.mdp, c, x),
                        q_star.shape) for n in (2, 4, 8)}
        chain = [fp[8] - fp[4], fp[4] - fp[2], fp[2] - q_star]
        gap = max(float(d.max()) for d in chain)
        worst = max(worst, gap)
        ok &= gap <= 1e-9
    return CheckResult("C02", "Depth monotonicity", ok,
                       f"max violation of Q8<=Q4<=Q2<=Q* over single policies = {worst:.3g}")


def check_03() -> CheckResult:
    tf, pset, q_star = _threefork()
    cfg = HighwayConfig(pset, LookaheadSet((200,)))
    q = _solve(lambda x: multistep_bo(tf.mdp, cfg, x), q_star.shape)
    target = np.mean([q_pi_oracle(tf.mdp, pi) for pi in tf.policies], axis=0)
    err = float(np.abs(q - target).max())
    ok = err <= 1e-6 and abs(target[tf.start, UP] - 1.0) <= 1e-9
    return CheckResult("C03", "Depth limit", ok,
                       f"||Q_200 - E[Q^pi]|| = {err:.3g}; E[Q^pi](S_A,up) = {target[tf.start, UP]:g}",
                       [("threefork", "multistep_bo", "value_error", 200.0, err, int(ok))])


def check_04() -> CheckResult:
    tf, pset, q_star = _threefork()
    errs = []
    for n in range(1, 11):
        cfg = HighwayConfig(pset, LookaheadSet((n,)))
        q = _solve(lambda x: highway_generalized(tf.mdp, cfg, x), q_star.shape)
        errs.append(float(np.abs(q - q_star).max()))
    worst = max(errs)
    ok = worst <= 1e-8
    return CheckResult("C04", "Highway equation", ok, f"max_n ||Q_n - Q*|| = {worst:.3g}",
                       [("threefork", "highway_generalized", "value_error", float(n), e, int(e <= 1e-8))
                        for n, e in enumerate(errs, start=1)])


def _random_case(rng, S=5, A=3):
    gamma = float(rng.uniform(0.5, 0.95))
    mdp = random_mdp(rng, S, A, gamma)
    pols = tuple(epsilon_greedy(rng.normal(size=(S, A)), float(rng.uniform())) for _ in range(3))
    depths = tuple(sorted(int(n) for n in rng.choice(np.arange(1, 8), size=3, replace=False)))
    return mdp, PolicySet(pols), LookaheadSet(depths)


SOFTMAX_ALPHAS = (0.01, 1.0, 100.0)


def check_05() -> CheckResult:
    rng = stream((CHECK_SEED, 5))
    counts = {}
    worst = {}
    for i in range(50):
        mdp, pset, la = _random_case(rng)
        pi = pset.policies[0]
        alpha = SOFTMAX_ALPHAS[i % len(SOFTMAX_ALPHAS)]
        cfg = HighwayConfig(pset, la)
        scfg = HighwayConfig(pset, la, 1, "smax", "smax", alpha)
        ops = {
            "bellman_optimality": lambda q: bellman_optimality(mdp, q),
            "bellman_expectation": lambda q: bellman_expectation(mdp, pi, q),
            "multistep_bo": lambda q: multistep_bo(mdp, cfg, q),
            "highway_generalized": lambda q: highway_generalized(mdp, cfg, q),
            "highway_optimality": lambda q: highway_optimality(mdp, pset, la, q),
            "highway_softmax": lambda q: highway_softmax(mdp, scfg, q),
        }
        for _ in range(10):
            scale = float(rng.uniform(0.1, 10.0))
            q1 = rng.normal(scale=scale, size=(5, 3))
            q2 = rng.normal(scale=scale, size=(5, 3))
            bound = mdp.discount * np.abs(q1 - q2).max()
            for name, K in ops.items():
                gap = float(np.abs(K(q1) - K(q2)).max() - bound)
                worst[name] = max(worst.get(name, -np.inf), gap)
                if gap > 1e-9:
                    counts[name] = counts.get(name, 0) + 1
    total = sum(counts.values())
    detail = f"{total} violations in 3000 comparisons" + (f" {counts}" if counts else "")
    return CheckResult("C05", "Contraction suite", total == 0, detail,
                       [("random", name, "violations", 0.0, float(counts.get(name, 0)),
                         int(counts.get(name, 0) == 0)) for name in worst])


def check_06() -> CheckResult:
    rng = stream((CHECK_SEED, 6))
    worst = 0.0
    for _ in range(10):
        mdp, pset, la = _random_case(rng)
        shifted = q_star_oracle(mdp) + 1.0
        cfg = HighwayConfig(pset, la, gate_threshold=0)
        worst = max(worst, float(np.abs(broken_gate_variant(mdp, cfg, shifted) - shifted).max()))
    tf, pset, q_star = _threefork()
    shifted = q_star + np.where(tf.mdp.terminal[:, None], 0.0, 1.0)
    cfg0 = HighwayConfig(pset, LookaheadSet((10,)), gate_threshold=0)
    worst = max(worst, float(np.abs(broken_gate_variant(tf.mdp, cfg0, shifted) - shifted).max()))
    cfg3 = HighwayConfig(pset, LookaheadSet((10,)), gate_threshold=3)
    q3 = _solve(lambda x: broken_gate_variant(tf.mdp, cfg3, x), q_star.shape)
    gap = float(q_star[tf.start, UP] - q3[tf.start, UP])
    ok = worst <= 1e-9 and gap > 1e-8
    return CheckResult("C06", "Broken gates", ok,
                       f"n1=0 residual at Q*+1 = {worst:.3g}; n1=3 fixed point at (S_A,up) = "
                       f"{q3[tf.start, UP]:g} vs Q* {q_star[tf.start, UP]:g}")


def check_07() -> CheckResult:
    rng = stream((CHECK_SEED, 7))
    bad = {"d_H<=min(d_B,d_MSBO)": 0, "d_G+<=d_G": 0, "D_H<=D_B": 0, "below-Q*": 0}
    for _ in range(50):
        mdp, pset, la = _random_case(rng)
        q_star = q_star_oracle(mdp)
        S, A = q_star.shape
        cfg = HighwayConfig(pset, la)
        q = q_star - np.abs(rng.normal(scale=float(rng.uniform(0.1, 5)), size=(S, A)))
        d_h = np.abs(highway_generalized(mdp, cfg, q) - q_star)
        d_b = np.abs(bellman_optimality(mdp, q) - q_star)
        d_m = np.abs(multistep_bo(mdp, cfg, q) - q_star)
        bad["d_H<=min(d_B,d_MSBO)"] += int(np.any(d_h > np.minimum(d_b, d_m) + 1e-9))
        d_plus = np.abs(highway_optimality(mdp, pset, la, q) - q_star)
        for _ in range(2):
            sel_pi = PolicySet(pset.policies, selection=tuple(rng.dirichlet(np.ones(len(pset)))))
            sel_n = LookaheadSet(la.depths, tuple(rng.dirichlet(np.ones(len(la.depths)))))
            d_g = np.abs(highway_generalized(mdp, HighwayConfig(sel_pi, sel_n), q) - q_star)
            bad["d_G+<=d_G"] += int(np.any(d_plus > d_g + 1e-9))
        q_free = q_star + rng.normal(scale=float(rng.uniform(0.1, 5)), size=(S, A))
        D_h = np.abs(highway_generalized(mdp, cfg, q_free) - q_star).max()
        D_b = np.abs(bellman_optimality(mdp, q_free) - q_star).max()
        bad["D_H<=D_B"] += int(D_h > D_b + 1e-9)
        for K in (lambda x: highway_generalized(mdp, cfg, x), lambda x: multistep_bo(mdp, cfg, x)):
            it = q.copy()
            for _ in range(30):
                it = K(it)
                if np.any(it > q_star + 1e-9):
                    bad["below-Q*"] += 1
                    break
    total = sum(bad.values())
    return CheckResult("C07", "Distance bounds", total == 0, f"violations {bad}",
                       [("random", k, "violations", 0.0, float(v), int(v == 0)) for k, v in bad.items()])


def check_08() -> CheckResult:
    rng = stream((CHECK_SEED, 8))
    bad = 0
    match = 0.0
    for _ in range(20):
        mdp, pset, la = _random_case(rng)
        q_star = q_star_oracle(mdp)
        for alpha in SOFTMAX_ALPHAS:
            cfg = HighwayConfig(pset, la, 1, "smax", "smax", alpha)
            for _ in range(5):
                q = q_star + rng.normal(scale=float(rng.uniform(0.1, 5)), size=q_star.shape)
                lhs = np.abs(highway_softmax(mdp, cfg, q) - q_star).max()
                bad += int(lhs > mdp.discount * np.abs(q - q_star).max() + 1e-9)
        cfg = HighwayConfig(pset, la, 1, "smax", "smax", 1e6)
        q = q_star + rng.normal(size=q_star.shape)
        match = max(match, float(np.abs(highway_softmax(mdp, cfg, q)
                                        - highway_optimality(mdp, pset, la, q)).max()))
    ok = bad == 0 and match <= 1e-6
    return CheckResult("C08", "Softmax operator", ok,
                       f"{bad} contraction-to-Q* violations; alpha=1e6 vs max gap {match:.3g}")


def check_09() -> CheckResult:
    rng = stream((CHECK_SEED, 9))
    worst_is = worst_tr = 0.0
    for _ in range(20):
        S, A = 5, 3
        gamma = float(rng.uniform(0.5, 0.9))
        mdp = random_mdp(rng, S, A, gamma)
        target = rng.dirichlet(np.ones(A), size=S)
        behavior = rng.dirichlet(np.ones(A), size=S)
        q_pi = q_pi_oracle(mdp, target)
        pset = PolicySet((behavior, rng.dirichlet(np.ones(A), size=S)))
        la = LookaheadSet((1, 2, 4))
        worst_is = max(worst_is, float(np.abs(multistep_be_is(mdp, target, pset, la, q_pi) - q_pi).max()))
        horizon = int(math.ceil(math.log(1e-12) / math.log(gamma)))
        out = trace_operator(mdp, target, behavior, TraceScheme("retrace", 1.0), horizon, q_pi)
        worst_tr = max(worst_tr, float(np.abs(out - q_pi).max()))
    # retrace weights along an epsilon-greedy trajectory, greedy target
    S, A = 10, 4
    mdp = random_mdp(rng, S, A, 0.9)
    q = rng.normal(size=(S, A))
    target, behavior = greedy_policy(q), epsilon_greedy(q, 0.2)
    s, traj = 0, []
    for _ in range(20):
        a = int(rng.choice(A, p=behavior[s]))
        traj.append((s, a))
        s = int(rng.choice(S, p=mdp.transition[s, a]))
    w = retrace_weight_profile(target, behavior, traj, 0.5)
    monotone = bool(np.all(np.diff(w) <= 1e-15))
    low = bool(w.min() < 0.01)
    ok = worst_is <= 1e-8 and worst_tr <= 1e-8 and monotone and low
    return CheckResult("C09", "IS baselines", ok,
                       f"IS err {worst_is:.3g}, retrace err {worst_tr:.3g}, weights monotone={monotone}, "
                       f"w[19]={w[-1]:.3g}",
                       [("random", "retrace-lambda-0.5", "retrace_weight", float(t), float(v), 1)
                        for t, v in enumerate(w)])


def check_10() -> CheckResult:
    ok = True
    parts = []
    metrics = []
    eps = HVI_DEFAULTS.error_bound
    for rooms in MULTIROOM_ROOMS:
        mr = multiroom_mdp(rooms, MULTIROOM_SIZE)
        v_star = q_star_oracle(mr.mdp).max(axis=1)
        vi = alg.value_iteration(mr.mdp, tol=eps)
        hvi = alg.highway_value_iteration(mr.mdp, HVI_DEFAULTS)
        err = float(np.abs(hvi.v - v_star).max())
        good = hvi.converged and err <= 10 * eps and hvi.iterations <= vi.iterations
        ok &= good
        parts.append(f"rooms={rooms}: HVI {hvi.iterations} it/{hvi.samples} samples, "
                     f"VI {vi.iterations} it/{vi.samples} samples, err {err:.2g}")
        env = f"multiroom-{rooms}"
        metrics += [(env, "highway_value_iteration", "iterations", float(rooms), float(hvi.iterations), int(good)),
                    (env, "highway_value_iteration", "samples", float(rooms), float(hvi.samples), 1),
                    (env, "value_iteration", "iterations", float(rooms), float(vi.iterations), 1),
                    (env, "value_iteration", "samples", float(rooms), float(vi.samples), 1)]
    return CheckResult("C10", "Highway VI on Multi-Room", ok, "; ".join(parts), metrics)


BASELINES = ("q_lambda", "sarsa_lambda", "monte_carlo")


def toy_medians(rows) -> dict[tuple[str, int], float]:
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        if r.metric == "episodes_to_solve":
            groups.setdefault((r.algorithm, int(r.x)), []).append(r.y)
    return {k: float(np.median(v)) for k, v in groups.items()}


def judge_toy(med: dict[tuple[str, int], float], delays=TOY_DELAYS) -> tuple[bool, list[str]]:
    reasons = []
    hq = [med[("highway_q", d)] for d in delays]
    if not all(np.isfinite(hq)):
        reasons.append("highway_q unsolved at some delay")
    for d in delays:
        best = min(med[(b, d)] for b in BASELINES)
        if not med[("highway_q", d)] <= 0.5 * best:
            reasons.append(f"delay {d}: highway_q {med[('highway_q', d)]:g} > half of best baseline {best:g}")
    if not hq[-1] <= 2 * hq[0]:
        reasons.append(f"highway_q grows {hq[-1] / hq[0]:.3g}x")
    ql = [med[("q_lambda", d)] for d in delays]
    if not all(a < b for a, b in zip(ql, ql[1:])):
        reasons.append(f"q_lambda medians not increasing {ql}")
    return not reasons, reasons


def check_11(workers: int = 1) -> CheckResult:
    from .runner import run
    ok = True
    parts = []
    metrics = []
    for task in ("choice", "traceback"):
        cfg = ExperimentConfig.from_dict(dict(PRESETS[f"toy-{task}"], workers=workers))
        med = toy_medians(run(cfg))
        good, reasons = judge_toy(med)
        ok &= good
        table = ", ".join(f"{a}@{d}={med[(a, d)]:g}" for d in TOY_DELAYS
                          for a in ("highway_q",) + BASELINES)
        parts.append(f"{task}: {table}" + ("" if good else f" -> {'; '.join(reasons)}"))
        metrics += [(f"{task}-{d}", a, "median", float(d), v, int(np.isfinite(v)))
                    for (a, d), v in sorted(med.items())]
    return CheckResult("C11", "Toy tasks", ok, " | ".join(parts), metrics)


def check_12() -> CheckResult:
    tf, pset, q_star = _threefork()
    cfg = HighwayConfig(pset, LookaheadSet((10,)))
    q = _solve(lambda x: highway_generalized(tf.mdp, cfg, x), q_star.shape)
    choice = gate_choices(tf.mdp, cfg, q)[:, 0, tf.start, UP]
    got = dict(zip(("blue", "orange", "red"), (int(c) for c in choice)))
    ok = got == {"blue": 10, "orange": 1, "red": 1}
    return CheckResult("C12", "Gate trace", ok, f"gate choice at (S_A,up) after convergence: {got}",
                       [("threefork", name, "gate_choice", 10.0, float(v), int(ok)) for name, v in got.items()])


CHECKS = {f"acceptance-{i:02d}": fn for i, fn in enumerate(
    (check_01, check_02, check_03, check_04, check_05, check_06, check_07, check_08, check_09,
     check_10, check_11, check_12), start=1)}
