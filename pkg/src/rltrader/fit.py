"""Maximum-likelihood fitting of the nested models and the comparison tests.

Three nested models are compared per player:

* ``random``: uniform choice over the three bins, no parameters;
* ``myopic``: Q-learning with ``gamma = 0`` (alpha, beta free);
* ``full``: Q-learning with alpha, beta and gamma free.

Fits are multi-start bounded L-BFGS-B runs with finite-difference
gradients from a fixed grid of entry points, so they are deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import FitError, UndefinedLikelihoodError
from .model import (ALPHA_BOUNDS, BETA_BOUNDS, DEFAULT_RHO, GAMMA_BOUNDS, ModelParams,
                    SellSequence, encode_sells, sequence_nll)
from .risk import RiskClassification, scramble

MODELS = ("random", "myopic", "full")
N_PARAMS = {"random": 0, "myopic": 2, "full": 3}
LN3 = math.log(3.0)


@dataclass(frozen=True)
class FitConfig:
    alpha_bounds: tuple[float, float] = ALPHA_BOUNDS
    beta_bounds: tuple[float, float] = BETA_BOUNDS
    gamma_bounds: tuple[float, float] = GAMMA_BOUNDS
    alpha_starts: tuple[float, ...] = (0.0, 0.5, 2.0)
    beta_starts: tuple[float, ...] = (0.0, 25.0, 50.0)
    gamma_starts: tuple[float, ...] = (0.0, 0.5, 0.9999)
    # grid entries are pulled this far inside the open parameter bounds
    eps: float = 1e-6
    maxiter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-12
    rho: float = DEFAULT_RHO
    reward: str = "cost_basis"

    def box(self, model: str) -> list[tuple[float, float]]:
        """Optimizer bounds.  alpha and beta have open bounds; gamma is closed
        at 0 so the myopic optimum is a feasible point of the full model."""
        (alo, ahi), (blo, bhi) = self.alpha_bounds, self.beta_bounds
        box = [(alo + self.eps, ahi - self.eps), (blo + self.eps, bhi - self.eps)]
        if model == "full":
            box.append(tuple(self.gamma_bounds))
        return box

    def start_grid(self, model: str) -> list[tuple[float, ...]]:
        axes = [self.alpha_starts, self.beta_starts]
        bounds = [self.alpha_bounds, self.beta_bounds]
        if model == "full":
            axes.append(self.gamma_starts)
            bounds.append(self.gamma_bounds)
        clamped = [[min(max(v, lo + self.eps), hi - self.eps) for v in axis]
                   for axis, (lo, hi) in zip(axes, bounds)]
        return [tuple(p) for p in itertools.product(*clamped)]


@dataclass(frozen=True)
class StartRecord:
    start: tuple[float, ...]
    end: tuple[float, ...]
    nll: float
    converged: bool
    message: str = ""

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.nll)


@dataclass(frozen=True)
class FitResult:
    model: str
    params: ModelParams | None
    nll: float
    n_obs: int
    n_params: int
    starts: tuple[StartRecord, ...] = ()

    def params_dict(self) -> dict | None:
        if self.params is None:
            return None
        return {"alpha": self.params.alpha, "beta": self.params.beta,
                "gamma": self.params.gamma}


def random_nll(n_sells: int) -> float:
    """NLL of uniform choice over three bins: ``n * ln 3``."""
    if n_sells < 1:
        raise UndefinedLikelihoodError("random-model likelihood needs at least one sell")
    return n_sells * LN3


def random_fit(n_sells: int) -> FitResult:
    return FitResult("random", None, random_nll(n_sells), n_sells, 0)


def _minimize_from(objective, x0, box, config: FitConfig) -> StartRecord:
    x0 = np.asarray(x0, dtype=float)
    try:
        f0 = objective(x0)
        res = optimize.minimize(
            objective, x0, method="L-BFGS-B", bounds=box,
            options={"maxiter": config.maxiter, "gtol": config.gtol, "ftol": config.ftol})
    except (ArithmeticError, ValueError) as exc:
        return StartRecord(tuple(x0), tuple(x0), math.nan, False, repr(exc))
    x, f = np.asarray(res.x, dtype=float), float(res.fun)
    if not math.isfinite(f):
        return StartRecord(tuple(x0), tuple(x), math.nan, False, str(res.message))
    if math.isfinite(f0) and f0 < f:
        # never report something worse than where the search began
        x, f = x0, f0
    return StartRecord(tuple(x0), tuple(float(v) for v in x), f, bool(res.success),
                       str(res.message))


def fit_sequence(seq: SellSequence, model: str = "myopic", config: FitConfig | None = None,
                 myopic: FitResult | None = None) -> FitResult:
    """Fit ``model`` to an already-encoded sell sequence."""
    config = config or FitConfig()
    n = len(seq)
    if n < 1:
        raise UndefinedLikelihoodError("cannot fit a history without sells")
    if model == "random":
        return random_fit(n)
    if model not in ("myopic", "full"):
        raise ValueError(f"unknown model {model!r}")

    if model == "myopic":
        def objective(x):
            return sequence_nll(seq, x[0], x[1], 0.0)
    else:
        def objective(x):
            return sequence_nll(seq, x[0], x[1], x[2])

    starts = config.start_grid(model)
    if model == "full":
        if myopic is None:
            myopic = fit_sequence(seq, "myopic", config)
        starts.append((myopic.params.alpha, myopic.params.beta, 0.0))

    box = config.box(model)
    records = tuple(_minimize_from(objective, x0, box, config) for x0 in starts)
    usable = [i for i, r in enumerate(records) if not r.failed]
    if not usable:
        raise FitError(f"all {len(records)} starts failed for the {model} model")
    best = records[min(usable, key=lambda i: (records[i].nll, i))]
    gamma = best.end[2] if model == "full" else 0.0
    params = ModelParams(best.end[0], best.end[1], gamma, config.rho)
    return FitResult(model, params, best.nll, n, N_PARAMS[model], records)


def fit_player(history, classification, model: str = "myopic",
               config: FitConfig | None = None, myopic: FitResult | None = None) -> FitResult:
    """Best (lowest-NLL) fit of ``model`` to one player's sells.

    For the full model the myopic optimum (with ``gamma = 0``) is added as an
    extra start, which makes the full fit at least as good as the myopic one.
    Pass an existing myopic ``FitResult`` to avoid refitting it.
    """
    config = config or FitConfig()
    seq = encode_sells(history, classification, config.rho, config.reward)
    return fit_sequence(seq, model, config, myopic)


# ---------------------------------------------------------------- statistics

def chi2_quantile(p: float, dof: int) -> float:
    return float(stats.chi2.ppf(p, dof))


@dataclass(frozen=True)
class ComparisonResult:
    nested: str
    fuller: str
    statistic: float
    dof: int
    critical_value: float
    p_value: float
    significant: bool
    confidence: float

    def to_dict(self) -> dict:
        return {
            "pair": [self.nested, self.fuller],
            "statistic": self.statistic,
            "dof": self.dof,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "significant": self.significant,
            "confidence": self.confidence,
        }


def lrt_from_nll(nll_nested: float, nll_fuller: float, dof: int, confidence: float = 0.95,
                 names: tuple[str, str] = ("nested", "fuller")) -> ComparisonResult:
    if dof < 1:
        raise ValueError("the fuller model must have more parameters")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    statistic = max(2.0 * (nll_nested - nll_fuller), 0.0)
    critical = chi2_quantile(confidence, dof)
    p_value = float(stats.chi2.sf(statistic, dof))
    return ComparisonResult(names[0], names[1], statistic, dof, critical, p_value,
                            statistic > critical, confidence)


def likelihood_ratio_test(nested: FitResult, fuller: FitResult,
                          confidence: float = 0.95) -> ComparisonResult:
    """Chi-square likelihood-ratio test of two nested fits on the same data."""
    if nested.n_obs != fuller.n_obs:
        raise ValueError(f"fits use different data ({nested.n_obs} vs {fuller.n_obs} sells)")
    if nested.n_params >= fuller.n_params:
        raise ValueError("nested model must have fewer parameters than the fuller one")
    return lrt_from_nll(nested.nll, fuller.nll, fuller.n_params - nested.n_params,
                        confidence, (nested.model, fuller.model))


def bic(nll: float, n_params: int, n_obs: int) -> float:
    """``k ln n + 2 NLL``; lower is better."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return n_params * math.log(n_obs) + 2.0 * nll


@dataclass(frozen=True)
class PopulationStat:
    successes: int
    trials: int
    confidence: float
    low: float
    high: float

    @property
    def proportion(self) -> float:
        return self.successes / self.trials

    def to_dict(self) -> dict:
        return {"successes": self.successes, "trials": self.trials,
                "proportion": self.proportion, "confidence": self.confidence,
                "ci_low": self.low, "ci_high": self.high}


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95) -> PopulationStat:
    """Exact two-sided binomial interval from beta-distribution quantiles."""
    k, n = int(successes), int(trials)
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"invalid counts: {k} successes of {n} trials")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    tail = (1.0 - confidence) / 2.0
    low = 0.0 if k == 0 else float(stats.beta.ppf(tail, k, n - k + 1))
    high = 1.0 if k == n else float(stats.beta.ppf(1.0 - tail, k + 1, n - k))
    return PopulationStat(k, n, confidence, low, high)


def derive_seed(master: int, index: int) -> int:
    """Independent child seed for the ``index``-th scramble."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


@dataclass(frozen=True)
class ScrambleResult:
    player: str
    ranked_bic: float
    scrambled_bics: tuple[float, ...]
    seeds: tuple[int, ...]
    stat: PopulationStat
    failures: tuple[str, ...] = field(default=())


def scrambled_experiment(history, ranked: RiskClassification, n_scrambles: int = 500,
                         seed: int = 0, config: FitConfig | None = None,
                         confidence: float = 0.99) -> ScrambleResult:
    """How often does the risk-ranked binning beat random binnings by BIC?

    The myopic model is fitted once on ``ranked`` and once per scramble.
    A scramble counts as a success when ``BIC_ranked < BIC_scrambled``
    (ties are not successes).  Scrambles whose fit fails are dropped from
    the trial count and listed in ``failures``.
    """
    if n_scrambles < 1:
        raise ValueError("n_scrambles must be >= 1")
    config = config or FitConfig()
    base = fit_player(history, ranked, "myopic", config)
    ranked_bic = bic(base.nll, base.n_params, base.n_obs)
    bics, seeds, failures = [], [], []
    for i in range(n_scrambles):
        s = derive_seed(seed, i)
        seeds.append(s)
        try:
            fit = fit_player(history, scramble(ranked, s), "myopic", config)
        except FitError as exc:
            bics.append(math.nan)
            failures.append(f"scramble {i} (seed {s}): {exc}")
            continue
        bics.append(bic(fit.nll, fit.n_params, fit.n_obs))
    valid = [b for b in bics if math.isfinite(b)]
    if not valid:
        raise FitError("every scrambled fit failed")
    wins = sum(ranked_bic < b for b in valid)
    return ScrambleResult(history.player_id, ranked_bic, tuple(bics), tuple(seeds),
                          clopper_pearson(wins, len(valid), confidence), tuple(failures))


def population_verdict(per_player: Sequence[ComparisonResult], confidence: float = 0.99,
                       chance_threshold: float = 0.5) -> tuple[PopulationStat, bool]:
    """Proportion of significant players with its exact interval.

    The verdict is positive only if the whole interval lies above
    ``chance_threshold``.
    """
    if not per_player:
        raise ValueError("need at least one player")
    k = sum(c.significant for c in per_player)
    stat = clopper_pearson(k, len(per_player), confidence)
    return stat, stat.low > chance_threshold
