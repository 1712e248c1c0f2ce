"""Experiment protocol: per-case evaluation, sweeps and oracle self-checks.

This layer turns the building blocks into the measurement procedures the
CLI exposes: sample an ensemble per test case, aggregate it, score it
against ground truth, and repeat over a grid (truncation step, ensemble
size, or pre-segmentation quality).

Seed discipline: a run has one master seed; the case at position ``i`` of
the evaluated list uses the child stream (seed, "<method>", i), and member
``m`` within it uses ("member", m). Degradation-oracle pre-segmentations
use (seed, "degrade", i). Cases are therefore independent and can be
evaluated concurrently in any order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .denoiser import GaussianOracleDenoiser
from .diffusion import (
    SamplerConfig,
    decode_to_probability,
    encode_probability,
    pd_sample,
    q_sample,
    q_step,
    reverse_chain,
    sample_ensemble_members,
)
from .ensemble import EnsembleResult, ensemble, mean_uncertainty
from .metrics import compute_all
from .preseg import DegradationSpec, degrade_to_dice
from .rng import Rng
from .schedule import NoiseSchedule, build_cosine_schedule
from .synth import Case

# Truncation sweep grid as fractions of T; at T = 1000 this is
# {50, 100, 200, 300, 400, 500, 600, 700, 800, 1000}.
TPRIME_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0)
PRESEG_QUALITY_TARGETS = (0.0, 0.5, 0.7, 0.9, 1.0)
ENSEMBLE_SIZES = (1, 2, 3, 5, 8)

PresegFn = Callable[[Case, int], np.ndarray]


def moment_z_scores(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Largest per-pixel z-scores for mean and variance gaps of two samples.

    `a` and `b` are (N, ...) stacks of draws from supposedly identical
    distributions. Standard errors are estimated from the data (the
    variance estimator's error uses the empirical fourth central moment).
    """
    n = a.shape[0]
    mean_se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / n)
    mean_z = float((np.abs(a.mean(axis=0) - b.mean(axis=0)) / mean_se).max())

    def var_se(x):
        centered = x - x.mean(axis=0)
        m4 = (centered**4).mean(axis=0)
        v = x.var(axis=0)
        return np.sqrt(np.maximum(m4 - v**2, 0.0) / n)

    se = np.sqrt(var_se(a) ** 2 + var_se(b) ** 2)
    var_z = float((np.abs(a.var(axis=0) - b.var(axis=0)) / se).max())
    return mean_z, var_z


@dataclass(frozen=True)
class EvalSettings:
    method: str  # "vanilla" or "pd"
    t_prime: int | None = None
    ensemble_size: int = 5
    sigma_rule: str = "beta_tilde"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.method not in ("vanilla", "pd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "pd" and self.t_prime is None:
            raise ValueError("pd evaluation needs t_prime")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def preseg_from_model(model) -> PresegFn:
    def fn(case: Case, index: int) -> np.ndarray:
        return model.segment(case.image)

    return fn


def preseg_from_degradation(target_dice: float, tolerance: float, seed: int) -> PresegFn:
    def fn(case: Case, index: int) -> np.ndarray:
        spec = DegradationSpec(
            target_dice=target_dice,
            tolerance=tolerance,
            seed=Rng(seed).child("degrade", index).key,
        )
        return degrade_to_dice(case.gt, spec)

    return fn


def _evaluate_one(
    case: Case,
    index: int,
    denoiser,
    schedule: NoiseSchedule,
    settings: EvalSettings,
    preseg_fn: PresegFn | None,
) -> tuple[dict, EnsembleResult]:
    rng = Rng(settings.seed).child(settings.method, index)
    preseg = preseg_fn(case, index) if settings.method == "pd" else None
    members, nfes = sample_ensemble_members(
        case.image,
        denoiser,
        schedule,
        rng,
        settings.ensemble_size,
        method=settings.method,
        t_prime=settings.t_prime,
        preseg_prob=preseg,
        config=SamplerConfig(sigma_rule=settings.sigma_rule),
    )
    result = ensemble([decode_to_probability(m) for m in members], nfes)
    row = {
        "case_id": case.case_id,
        "method": settings.method,
        "t_prime": settings.t_prime if settings.method == "pd" else None,
        "ensemble_size": settings.ensemble_size,
        **compute_all(result.binary, case.gt),
        "nfe": result.total_nfe,
        "mean_uncertainty": mean_uncertainty(result),
    }
    return row, result


def evaluate_cases(
    cases: list[Case],
    denoiser,
    schedule: NoiseSchedule,
    settings: EvalSettings,
    preseg_fn: PresegFn | None = None,
) -> tuple[list[dict], dict[str, EnsembleResult]]:
    """Score one method at one operating point over a list of cases.

    Returns per-case metric rows (sorted by case id) and the full ensemble
    results keyed by case id, for map export or re-aggregation.
    """
    if settings.method == "pd" and preseg_fn is None:
        raise ValueError("pd evaluation needs a pre-segmentation source")
    work = list(enumerate(cases))
    if settings.jobs > 1:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            outputs = list(
                pool.map(
                    lambda item: _evaluate_one(
                        item[1], item[0], denoiser, schedule, settings, preseg_fn
                    ),
                    work,
                )
            )
    else:
        outputs = [
            _evaluate_one(case, i, denoiser, schedule, settings, preseg_fn) for i, case in work
        ]
    rows = sorted((row for row, _ in outputs), key=lambda r: r["case_id"])
    results = {case.case_id: result for case, (_, result) in zip(cases, outputs)}
    return rows, results


def aggregate_row(rows: list[dict]) -> dict:
    """Dataset-mean row appended to per-case metric tables."""
    out = {
        "case_id": "mean",
        "method": rows[0]["method"],
        "t_prime": rows[0]["t_prime"],
        "ensemble_size": rows[0]["ensemble_size"],
    }
    for key in ("dice", "jaccard", "hd95", "f1", "nfe", "mean_uncertainty"):
        out[key] = float(np.mean([row[key] for row in rows]))
    return out


def _sweep_summary(rows: list[dict]) -> dict:
    values = [row["dice"] for row in rows]
    return {
        "mean_dice": float(np.mean(values)),
        "std_dice": float(np.std(values)),
        "mean_jaccard": float(np.mean([row["jaccard"] for row in rows])),
        "mean_hd95": float(np.mean([row["hd95"] for row in rows])),
        "mean_f1": float(np.mean([row["f1"] for row in rows])),
        "mean_uncertainty": float(np.mean([row["mean_uncertainty"] for row in rows])),
        "nfe_per_case": float(np.mean([row["nfe"] for row in rows])),
    }


def default_tprime_grid(total_steps: int) -> list[int]:
    grid = []
    for fraction in TPRIME_FRACTIONS:
        value = max(1, round(fraction * total_steps))
        if value not in grid:
            grid.append(value)
    return grid


def sweep_tprime(
    grid: list[int],
    cases: list[Case],
    denoiser,
    schedule: NoiseSchedule,
    preseg_fn: PresegFn,
    settings: EvalSettings,
) -> list[dict]:
    if not grid:
        raise ValueError("empty t_prime grid")
    rows = []
    for t_prime in grid:
        point = replace(settings, method="pd", t_prime=int(t_prime))
        case_rows, _ = evaluate_cases(cases, denoiser, schedule, point, preseg_fn)
        rows.append({"t_prime": int(t_prime), **_sweep_summary(case_rows)})
    return rows


def sweep_preseg_quality(
    targets: list[float],
    cases: list[Case],
    denoiser,
    schedule: NoiseSchedule,
    settings: EvalSettings,
    tolerance: float = 0.02,
) -> list[dict]:
    if not targets:
        raise ValueError("empty pre-segmentation quality grid")
    rows = []
    for target in targets:
        preseg_fn = preseg_from_degradation(float(target), tolerance, settings.seed)
        point = replace(settings, method="pd")
        case_rows, _ = evaluate_cases(cases, denoiser, schedule, point, preseg_fn)
        rows.append({"target_dice": float(target), **_sweep_summary(case_rows)})
    return rows


def sweep_ensemble(
    sizes: list[int],
    cases: list[Case],
    denoiser,
    schedule: NoiseSchedule,
    preseg_fn: PresegFn | None,
    settings: EvalSettings,
) -> list[dict]:
    """Ensemble-size sweep, sharing members across sizes.

    The largest requested ensemble is sampled once per case and smaller
    sizes re-aggregate its leading members; member m is identical across
    grid points, so the comparison isolates the effect of size.
    """
    if not sizes:
        raise ValueError("empty ensemble grid")
    largest = max(sizes)
    base = replace(settings, ensemble_size=largest)
    case_rows, results = evaluate_cases(cases, denoiser, schedule, base, preseg_fn)
    per_member_nfe = case_rows[0]["nfe"] // largest
    rows = []
    for size in sizes:
        point_rows = []
        for case in cases:
            result = results[case.case_id]
            sub = ensemble(result.members[:size], [per_member_nfe] * size)
            point_rows.append(
                {
                    **compute_all(sub.binary, case.gt),
                    "mean_uncertainty": mean_uncertainty(sub),
                    "nfe": sub.total_nfe,
                }
            )
        rows.append({"ensemble_size": int(size), **_sweep_summary(point_rows)})
    return rows


def oracle_check(
    total_steps: int = 100,
    t_prime: int = 30,
    trials: int = 2000,
    grid_side: int = 8,
    seed: int = 0,
    target_mean: float = 0.3,
    target_std: float = 0.5,
) -> tuple[bool, list[dict]]:
    """Verify the samplers against the closed-form Gaussian oracle.

    Runs the distribution-level checks that need no training: forward
    chain/marginal agreement, perfect-denoiser inversion, endpoint moments
    of the full chain, endpoint moments of the truncated chain started from
    diffused draws of the data distribution, the empty-chain identity and
    exact NFE accounting. Returns (all_passed, result rows).
    """
    schedule = build_cosine_schedule(total_steps)
    if not 1 <= t_prime <= total_steps:
        raise ValueError(f"t_prime {t_prime} outside 1..{total_steps}")
    oracle = GaussianOracleDenoiser(target_mean, target_std, schedule)
    rng = Rng(seed).child("oracle-check")
    image = np.zeros((grid_side, grid_side))
    shape = (trials, grid_side, grid_side)
    checks: list[dict] = []

    def record(name: str, measured: float, bound: float, ok: bool | None = None):
        checks.append(
            {
                "check": name,
                "measured": float(measured),
                "bound": float(bound),
                "passed": bool(measured <= bound) if ok is None else ok,
            }
        )

    # Forward chain vs closed-form marginal, first and second moments;
    # both sides are Monte-Carlo, so compare in units of the empirical
    # standard error of the difference.
    x0 = np.where(rng.child("signs").uniform(shape) < 0.5, -1.0, 1.0)
    marginal_rng, chain_rng = rng.child("marginal"), rng.child("chain")
    for t in sorted({1, total_steps // 4, total_steps // 2, total_steps}):
        direct = q_sample(x0, t, schedule, marginal_rng.standard_normal(shape))
        stepped = x0
        for s in range(1, t + 1):
            stepped = q_step(stepped, s, schedule, chain_rng.standard_normal(shape))
        mean_z, var_z = moment_z_scores(direct, stepped)
        record(f"chain_vs_marginal_mean_t{t}", mean_z, 5.0)
        record(f"chain_vs_marginal_var_t{t}", var_z, 5.0)

    # Perfect prediction inverts the forward map.
    inv_rng = rng.child("inversion")
    worst = 0.0
    for _ in range(100):
        t = inv_rng.integers(1, total_steps + 1)
        x0_case = inv_rng.standard_normal((grid_side, grid_side))
        eps = inv_rng.standard_normal((grid_side, grid_side))
        x_t = q_sample(x0_case, t, schedule, eps)
        ab = schedule.alpha_bar(t)
        x0_hat = (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        worst = max(worst, float(np.abs(x0_hat - x0_case).max()))
    record("perfect_denoiser_inversion", worst, 1e-9)

    # The reference tolerances (mean 0.05 per pixel, variance 15% relative)
    # are calibrated at 2000 trials; the per-pixel mean bound widens as
    # 1/sqrt(trials) below that so smaller smoke runs stay meaningful.
    mean_tol = 0.05 * max(1.0, math.sqrt(2000.0 / trials))
    var_rel_tol = 0.15
    target_var = target_std**2

    def moment_checks(name: str, endpoint: np.ndarray):
        # Mean is checked per pixel; the recovered variance is estimated
        # pooled over pixels (all draws target one scalar variance).
        mean_gap = float(np.abs(endpoint.mean(axis=0) - target_mean).max())
        var_rel = float(abs(endpoint.var(axis=0).mean() / target_var - 1.0))
        record(f"{name}_mean", mean_gap, mean_tol)
        record(f"{name}_var_rel", var_rel, var_rel_tol)

    # Full reverse chain from pure noise: one lockstep batch, one member
    # per trial (member streams match standalone sampler runs exactly).
    vanilla_members, vanilla_nfes = sample_ensemble_members(
        image, oracle, schedule, rng.child("vanilla"), trials, method="vanilla"
    )
    moment_checks("vanilla_endpoint", vanilla_members)
    record("vanilla_nfe", float(vanilla_nfes[0]), float(total_steps),
           ok=all(n == total_steps for n in vanilla_nfes))

    # Truncated chain started from diffused draws of the data distribution
    # (a perfect pre-segmentation in diffusion space).
    trunc_rng = rng.child("truncated")
    data = target_mean + target_std * trunc_rng.standard_normal(shape)
    x_start = q_sample(data, t_prime, schedule, trunc_rng.standard_normal(shape))
    endpoint, nfe = reverse_chain(
        x_start, image, oracle, schedule, t_prime, trunc_rng
    )
    moment_checks(f"truncated_endpoint_t{t_prime}", endpoint)
    record("truncated_nfe", float(nfe), float(t_prime), ok=nfe == t_prime)

    # Empty chain returns the encoded pre-segmentation untouched.
    preseg = decode_to_probability(np.full((grid_side, grid_side), target_mean))
    x0_out, nfe0 = pd_sample(image, preseg, oracle, schedule, 0, rng.child("empty"))
    exact = float(np.abs(x0_out - encode_probability(preseg)).max())
    record("empty_chain_identity", exact, 0.0, ok=exact == 0.0 and nfe0 == 0)

    # Truncation at T is indistinguishable from the full chain.
    pd_members, pd_nfes = sample_ensemble_members(
        image,
        oracle,
        schedule,
        rng.child("pd-full"),
        trials,
        method="pd",
        t_prime=total_steps,
        preseg_prob=np.full((grid_side, grid_side), 0.7),
    )
    moment_checks("pd_at_T_endpoint", pd_members)
    record("pd_nfe", float(pd_nfes[0]), float(total_steps),
           ok=all(n == total_steps for n in pd_nfes))

    return all(c["passed"] for c in checks), checks
