"""Property suite bundled behind ``bisimlab verify``.

Each check takes a root seed and a scale (a dict of sample counts), derives
its own random streams from the seed, and returns a :class:`CheckResult`
holding deterministic measured values.  Wall-clock runtimes are returned
separately so that the primary report stays byte-identical across reruns.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from bisimlab._seeding import derive_seed, make_rng
from bisimlab.coupling import independent_pair
from bisimlab.estimators import bias_audit, sample_F_hat_dbc, sample_F_hat_eps, sample_F_hat_psm, summarize
from bisimlab.learner import (SeparableDistanceParams, TabularDistanceParams, bisim_loss_batch,
                              train_tabular, verify_tightness)
from bisimlab.mdp import (duplicate_states, random_gaussian_mdp, random_mdp, random_policy,
                          reward_split_mdp, self_loop_mdp, shared_successor_mdp, uniform_policy)
from bisimlab.operators import (SimilarityG, fixed_point, metric_violations,
                                similarity_violations)
from bisimlab.transport import w1_discrete, w1_discrete_bruteforce, w1_unchecked

METRIC_KINDS = ("pi", "eps", "eps_bar")

SCALES = {
    "default": dict(
        ot_instances=1000, two_point_samples=100_000, self_sim_mdps=20, self_sim_draws=10_000,
        stat_samples=100_000, random_mdps=100, duplicate_mdps=50, tightness_pairs=50,
        tightness_mc=100_000, tightness_quad=1_000_000, bias_cases=100, bias_samples=10_000,
        rate_sizes=(100, 1_000, 10_000, 100_000), learn_steps=20_000, learn_target_samples=64,
        loop_steps=3_000, large_mdps=10,
    ),
    "quick": dict(
        ot_instances=100, two_point_samples=20_000, self_sim_mdps=3, self_sim_draws=1_000,
        stat_samples=20_000, random_mdps=10, duplicate_mdps=5, tightness_pairs=5,
        tightness_mc=20_000, tightness_quad=200_000, bias_cases=20, bias_samples=5_000,
        rate_sizes=(100, 1_000, 10_000), learn_steps=10_000, learn_target_samples=32,
        loop_steps=3_000, large_mdps=2,
    ),
}


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    runtime: float = 0.0  # seconds; kept out of the primary report

    def line(self) -> str:
        vals = " ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion:02d} {self.name}: {vals}"

    def as_dict(self) -> dict:
        return {"criterion": self.criterion, "name": self.name, "passed": self.passed,
                "measured": self.measured}


def _short(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


# -- fault injection --------------------------------------------------------------------


def corrupted_w1(a, b, M) -> float:
    """A deliberately wrong transport solver (negative control for the oracle check)."""
    return 1.05 * w1_unchecked(a, b, M) + 1e-3


def _corrupted_w1_checked(p, q, cost) -> float:
    return 1.05 * w1_discrete(p, q, cost) + 1e-3


FAULTS = {"transport": _corrupted_w1_checked}


# -- shared random instances ------------------------------------------------------------


def _random_instance(seed: int, max_states: int = 6, min_states: int = 2):
    rng = make_rng(seed)
    S = int(rng.integers(min_states, max_states + 1))
    A = int(rng.integers(1, 4))
    discount = float(rng.uniform(0.3, 0.95))
    mdp = random_mdp(S, A, seed=derive_seed(seed, "mdp"), discount=discount)
    return mdp, random_policy(mdp, seed=derive_seed(seed, "policy"))


@lru_cache(maxsize=8)
def _solved_suite(seed: int, n: int, max_states: int = 6, min_states: int = 2):
    """Random MDPs with their pi / eps / eps_bar fixed points at tol 1e-10."""
    out = []
    for k in range(n):
        mdp, policy = _random_instance(derive_seed(seed, k), max_states, min_states)
        out.append((mdp, policy, {kind: fixed_point(kind, mdp, policy, tol=1e-10) for kind in METRIC_KINDS}))
    return out


# -- checks -----------------------------------------------------------------------------


def check_ot_oracle(seed: int, scale: dict, solver=None) -> CheckResult:
    """Exact W1 against vertex enumeration on small random instances with metric costs."""
    solver = solver or w1_discrete
    rng = make_rng(derive_seed(seed, "ot_oracle"))
    worst = 0.0
    for _ in range(scale["ot_instances"]):
        m, n = rng.integers(1, 5, size=2)
        pts = rng.normal(size=(m + n, 2))
        cost = np.linalg.norm(pts[:m, None, :] - pts[None, m:, :], axis=-1)
        p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
        worst = max(worst, abs(solver(p, q, cost) - w1_discrete_bruteforce(p, q, cost)))
    return CheckResult(1, "ot_oracle", worst <= 1e-9,
                       {"instances": scale["ot_instances"], "max_abs_diff": worst})


def check_two_point(seed: int, scale: dict) -> CheckResult:
    """Two identical two-point laws: W1 is 0, the independent product pays D/2."""
    D = 1.0
    p = np.array([0.5, 0.5])
    d = np.array([[0.0, D], [D, 0.0]])
    exact = w1_discrete(p, p, d)
    pair = independent_pair(p, p, derive_seed(seed, "two_point"), scale["two_point_samples"])
    mean, _, se = summarize(d[pair.x, pair.y])
    ok = exact == 0.0 and abs(mean - D / 2) <= 3 * se
    return CheckResult(2, "two_point_product_coupling", ok,
                       {"w1": exact, "independent_mean": mean, "expected": D / 2, "stderr": se})


def check_self_similarity(seed: int, scale: dict) -> CheckResult:
    nonzero = 0
    draws = 0
    for k in range(scale["self_sim_mdps"]):
        mdp, policy = _random_instance(derive_seed(seed, f"selfsim/{k}"))
        d = fixed_point("eps_bar", mdp, policy, tol=1e-10).metric
        for z in range(mdp.n_states):
            x = sample_F_hat_eps(mdp, policy, None, None, d, (z, z),
                                 derive_seed(seed, f"selfsim/{k}/{z}"), scale["self_sim_draws"])
            nonzero += int(np.count_nonzero(x != 0.0))
            draws += x.size

    n = scale["stat_samples"]
    split = reward_split_mdp()
    pol = uniform_policy(split)
    dbc_mean, _, dbc_se = summarize(sample_F_hat_dbc(split, pol, 0.0, np.zeros((1, 1)), (0, 0),
                                                     derive_seed(seed, "selfsim/dbc"), n))

    shared = shared_successor_mdp(0.9)
    spol = uniform_policy(shared)
    d = fixed_point("eps_bar", shared, spol, tol=1e-10).metric
    psm_mean, _, psm_se = summarize(sample_F_hat_psm(shared, spol, None, d, (0, 0),
                                                     derive_seed(seed, "selfsim/psm"), n))
    psm_z = psm_mean / psm_se if psm_se > 0 else math.inf
    ok = nonzero == 0 and abs(dbc_mean - 0.5) <= 0.01 and psm_z > 2.326  # one-sided 1%
    return CheckResult(3, "self_similarity", ok, {
        "entangled_draws": draws, "entangled_nonzero": nonzero,
        "dbc_diag_mean": dbc_mean, "psm_diag_mean": psm_mean, "psm_z": psm_z})


def check_fixed_point(seed: int, scale: dict) -> CheckResult:
    mdp = self_loop_mdp()
    policy = uniform_policy(mdp)
    worst_closed = max(abs(fixed_point(k, mdp, policy, tol=1e-10).metric[0, 1] - 10.0) for k in METRIC_KINDS)
    worst_step = -math.inf
    for m, _, solved in _solved_suite(derive_seed(seed, "random_suite"), scale["random_mdps"]):
        for res in solved.values():
            r = np.asarray(res.residuals)
            if len(r) > 1:
                worst_step = max(worst_step, float(np.max(r[1:] - m.discount * r[:-1])))
    ok = worst_closed <= 1e-8 and worst_step <= 1e-12
    return CheckResult(4, "fixed_point", ok, {
        "self_loop_max_err": worst_closed, "mdps": scale["random_mdps"],
        "max_contraction_excess": worst_step})


def check_ordering(seed: int, scale: dict) -> CheckResult:
    slack_pe, slack_eb = math.inf, math.inf
    for _, _, solved in _solved_suite(derive_seed(seed, "random_suite"), scale["random_mdps"]):
        slack_pe = min(slack_pe, float(np.min(solved["eps"].metric - solved["pi"].metric)))
        slack_eb = min(slack_eb, float(np.min(solved["eps_bar"].metric - solved["eps"].metric)))
    slack = min(slack_pe, slack_eb)
    return CheckResult(5, "ordering_pi_eps_epsbar", slack >= -1e-8, {
        "mdps": scale["random_mdps"], "min_slack": slack,
        "min_slack_eps_minus_pi": slack_pe, "min_slack_epsbar_minus_eps": slack_eb})


def check_duplicates(seed: int, scale: dict) -> CheckResult:
    worst = 0.0
    n_pairs = 0
    for k in range(scale["duplicate_mdps"]):
        rng = make_rng(derive_seed(seed, f"dup/{k}"))
        base, base_policy = _random_instance(derive_seed(seed, f"dup/{k}/base"), max_states=4)
        chosen = rng.choice(base.n_states, size=int(rng.integers(1, base.n_states + 1)), replace=False)
        mdp, pairs = duplicate_states(base, {int(s): int(rng.integers(2, 4)) for s in chosen})
        policy = pairs.lift_policy(base_policy)
        for kind in METRIC_KINDS:
            d = fixed_point(kind, mdp, policy, tol=1e-10).metric
            worst = max(worst, max(d[i, j] for i, j in pairs))
        n_pairs += len(pairs)
    return CheckResult(6, "bisimilar_pairs_zero", worst <= 1e-8,
                       {"mdps": scale["duplicate_mdps"], "pairs": n_pairs, "max_distance": worst})


def check_tightness(seed: int, scale: dict) -> CheckResult:
    worst, failures, n = 0.0, 0, scale["tightness_pairs"]
    for k in range(n):
        rng = make_rng(derive_seed(seed, f"tight/{k}"))
        testbed, policy = random_gaussian_mdp(3, 1, seed=derive_seed(seed, f"tight/{k}/mdp"))
        params = SeparableDistanceParams(rng.uniform(0.0, 1.0, size=(3, 2)), (1, 2))
        pair = (rng.normal(size=3), rng.normal(size=3))
        report = verify_tightness(testbed, params, [pair], n_mc=scale["tightness_mc"],
                                  n_quad=scale["tightness_quad"], seed=derive_seed(seed, f"tight/{k}/mc"),
                                  policy=policy)
        worst = max(worst, report.worst_ratio)
        failures += 0 if report.passed else 1
    return CheckResult(7, "entangled_tightness", failures == 0,
                       {"pairs": n, "failures": failures, "worst_ratio": worst})


def check_estimator(seed: int, scale: dict) -> CheckResult:
    covered = 0
    n_cases = scale["bias_cases"]
    for k in range(n_cases):
        mdp, policy = _random_instance(derive_seed(seed, f"bias/{k}"))
        rng = make_rng(derive_seed(seed, f"bias/{k}/pair"))
        pair = tuple(int(s) for s in rng.integers(0, mdp.n_states, size=2))
        d = fixed_point("eps_bar", mdp, policy, tol=1e-10).metric
        (rep,) = bias_audit("eps", mdp, policy, d, [pair], scale["bias_samples"], derive_seed(seed, f"bias/{k}/mc"))
        covered += abs(rep.bias) <= 3 * rep.std_error
    coverage = covered / n_cases

    mdp, policy = _random_instance(derive_seed(seed, "rate"))
    d = fixed_point("eps_bar", mdp, policy, tol=1e-10).metric
    pair = (0, mdp.n_states - 1)
    ses = []
    for n in scale["rate_sizes"]:
        (rep,) = bias_audit("eps", mdp, policy, d, [pair], n, derive_seed(seed, f"rate/{n}"))
        ses.append(rep.std_error)
    slope = float(np.polyfit(np.log(scale["rate_sizes"]), np.log(ses), 1)[0])
    ok = coverage >= 0.95 and abs(slope + 0.5) <= 0.1
    return CheckResult(8, "estimator_unbiased_rate", ok,
                       {"cases": n_cases, "coverage_3se": coverage, "stderr_slope": slope})


def _gradient_check(seed: int) -> float:
    mdp, policy = _random_instance(derive_seed(seed, "gradcheck"), max_states=6, min_states=4)
    rng = make_rng(derive_seed(seed, "gradcheck/params"))
    n = mdp.n_states
    params = TabularDistanceParams(np.triu(rng.uniform(0.5, 1.5, size=(n, n)), 1))
    states = rng.integers(0, n, size=8)
    batch = np.column_stack([states, rng.permutation(states)])
    targets = rng.uniform(0.0, 2.0, size=len(batch))
    _, grad = bisim_loss_batch(params, mdp, policy, None, None, batch, 0, targets=targets)
    h = 1e-6
    worst = 0.0
    for i, j in zip(*np.triu_indices(n, 1)):
        up, down = params.raw.copy(), params.raw.copy()
        up[i, j] += h
        down[i, j] -= h
        fd = (bisim_loss_batch(TabularDistanceParams(up), mdp, policy, None, None, batch, 0, targets=targets)[0]
              - bisim_loss_batch(TabularDistanceParams(down), mdp, policy, None, None, batch, 0, targets=targets)[0]) / (2 * h)
        scale = max(abs(fd), abs(grad[i, j]))
        if scale > 1e-8:
            worst = max(worst, abs(fd - grad[i, j]) / scale)
    return worst


def check_learner(seed: int, scale: dict) -> CheckResult:
    sup_err = 0.0
    for S, A in ((6, 2), (8, 3)):
        mdp = random_mdp(S, A, seed=derive_seed(seed, f"learn/mdp/{S}"), discount=0.5)
        policy = random_policy(mdp, seed=derive_seed(seed, f"learn/policy/{S}"))
        _, hist = train_tabular(mdp, policy, steps=scale["learn_steps"], step_size=2e-2,
                                seed=derive_seed(seed, f"learn/{S}"), schedule="linear",
                                n_target_samples=scale["learn_target_samples"])
        sup_err = max(sup_err, hist.sup_error[-1])

    loop = self_loop_mdp()
    params, _ = train_tabular(loop, uniform_policy(loop), steps=scale["loop_steps"], step_size=1e-2,
                              seed=derive_seed(seed, "learn/loop"), track_reference=False)
    loop_d = float(params.distance()[0, 1])
    grad_err = _gradient_check(seed)
    ok = sup_err <= 5e-3 and abs(loop_d - 10.0) <= 0.05 and grad_err <= 1e-4
    return CheckResult(9, "learner", ok, {"sup_error": sup_err, "self_loop_d01": loop_d,
                                          "grad_rel_err": grad_err})


def check_axioms(seed: int, scale: dict) -> CheckResult:
    worst = 0.0
    n_metrics = 0
    suites = (_solved_suite(derive_seed(seed, "random_suite"), scale["random_mdps"]),
              _solved_suite(derive_seed(seed, "large_suite"), scale["large_mdps"], 8, 7))
    for suite in suites:
        for _, _, solved in suite:
            for res in solved.values():
                worst = max(worst, max(metric_violations(res.metric).values()))
                n_metrics += 1
    worst_g = 0.0
    for k in range(10):
        mdp = random_mdp(4, 3, seed=derive_seed(seed, f"axioms/g/{k}"))
        policy = random_policy(mdp, seed=derive_seed(seed, f"axioms/g/{k}/policy"))
        for g in (SimilarityG.reward_diff(mdp), SimilarityG.policy_mean_diff(policy)):
            worst_g = max(worst_g, max(similarity_violations(g).values()))
    ok = worst <= 1e-8 and worst_g <= 1e-8
    return CheckResult(10, "metric_axioms", ok, {"metrics": n_metrics, "max_violation": worst,
                                                 "similarities": 20, "max_g_violation": worst_g})


CHECKS = {
    1: check_ot_oracle, 2: check_two_point, 3: check_self_similarity, 4: check_fixed_point,
    5: check_ordering, 6: check_duplicates, 7: check_tightness, 8: check_estimator,
    9: check_learner, 10: check_axioms,
}


def run_check(criterion: int, seed: int, scale: str | dict = "default", fault: str | None = None) -> CheckResult:
    """Run one numbered check; ``fault`` names an injected defect (see ``FAULTS``)."""
    sc = SCALES[scale] if isinstance(scale, str) else scale
    start = time.perf_counter()
    if criterion == 1:
        result = check_ot_oracle(seed, sc, FAULTS[fault] if fault else None)
    else:
        result = CHECKS[criterion](seed, sc)
    result.runtime = time.perf_counter() - start
    if criterion == 1 and result.runtime >= 30.0:
        result.passed = False
    if criterion == 7 and result.runtime >= 300.0:
        result.passed = False
    return result


def run_all(seed: int, scale: str | dict = "default", fault: str | None = None, workers: int = 1,
            criteria=None) -> list[CheckResult]:
    """Run the checks, optionally across a process pool; results come back in criterion order."""
    criteria = sorted(criteria or CHECKS)
    if workers <= 1:
        return [run_check(k, seed, scale, fault) for k in criteria]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_check, k, seed, scale, fault) for k in criteria]
        return [f.result() for f in futures]
