"""Per-player fit reports, population summary and figure-data tables."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

from .fit import (ComparisonResult, FitConfig, FitResult, PopulationStat, ScrambleResult, bic,
                  fit_sequence, likelihood_ratio_test, population_verdict)
from .model import encode_sells

# (name, nested model, fuller model); figure panels a-b, c-d and e-f
COMPARISONS = (
    ("myopic_vs_random", "random", "myopic"),
    ("full_vs_myopic", "myopic", "full"),
    ("full_vs_random", "random", "full"),
)


@dataclass(frozen=True)
class PlayerFit:
    player: str
    fits: dict[str, FitResult]
    comparisons: dict[str, ComparisonResult]
    scheme: str = "beta"
    cap: int | None = None

    @property
    def n_sells(self) -> int:
        return self.fits["random"].n_obs

    def to_dict(self) -> dict:
        fits = self.fits
        return {
            "player": self.player,
            "n_sells": self.n_sells,
            "scheme": self.scheme,
            "cap": self.cap,
            "random_nll": fits["random"].nll,
            "myopic": {"params": fits["myopic"].params_dict(), "nll": fits["myopic"].nll},
            "full": {"params": fits["full"].params_dict(), "nll": fits["full"].nll},
            "lrt": {name: c.to_dict() for name, c in self.comparisons.items()},
            "bic": {m: bic(f.nll, f.n_params, f.n_obs) for m, f in fits.items()},
        }


def fit_all_models(history, classification, config: FitConfig | None = None,
                   confidence: float = 0.95, cap: int | None = None) -> PlayerFit:
    """Random, myopic and full fits for one player plus the three LRTs."""
    config = config or FitConfig()
    seq = encode_sells(history, classification, config.rho, config.reward)
    fits = {"random": fit_sequence(seq, "random", config)}
    fits["myopic"] = fit_sequence(seq, "myopic", config)
    fits["full"] = fit_sequence(seq, "full", config, myopic=fits["myopic"])
    comparisons = {name: likelihood_ratio_test(fits[a], fits[b], confidence)
                   for name, a, b in COMPARISONS}
    scheme = getattr(classification, "scheme", "beta")
    return PlayerFit(history.player_id, fits, comparisons, scheme, cap)


def population_summary(player_fits: Sequence[PlayerFit], confidence: float = 0.99,
                       chance_threshold: float = 0.5,
                       comparison: str = "myopic_vs_random") -> dict:
    stat, verdict = population_verdict([p.comparisons[comparison] for p in player_fits],
                                       confidence, chance_threshold)
    return {
        "comparison": comparison,
        "players": len(player_fits),
        "significant": [p.player for p in player_fits if p.comparisons[comparison].significant],
        **stat.to_dict(),
        "chance_threshold": chance_threshold,
        "verdict": "positive" if verdict else "negative",
    }


def dump_json(obj, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


FIG1_COLUMNS = ("player", "n_sells", "model_nll", "baseline_nll", "statistic", "dof",
                "critical_value", "p_value", "significant")


def write_comparison_csv(player_fits: Iterable[PlayerFit], name: str, stream: IO[str]) -> None:
    """Bars (fuller-model NLL), diamonds (nested-model NLL) and LRT per player."""
    _, nested, fuller = next(c for c in COMPARISONS if c[0] == name)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(FIG1_COLUMNS)
    for p in player_fits:
        c = p.comparisons[name]
        writer.writerow([p.player, p.n_sells, repr(p.fits[fuller].nll), repr(p.fits[nested].nll),
                         repr(c.statistic), c.dof, repr(c.critical_value), repr(c.p_value),
                         int(c.significant)])


def write_population_csv(summary: dict, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    cols = ("comparison", "successes", "trials", "proportion", "ci_low", "ci_high",
            "confidence", "chance_threshold", "verdict")
    writer.writerow(cols)
    writer.writerow([summary[c] if not isinstance(summary[c], float) else repr(summary[c])
                     for c in cols])


SCRAMBLE_COLUMNS = ("player", "prob", "ci_low", "ci_high", "successes", "trials")


def write_scramble_csv(results: Iterable[ScrambleResult], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SCRAMBLE_COLUMNS)
    for r in results:
        s: PopulationStat = r.stat
        writer.writerow([r.player, repr(s.proportion), repr(s.low), repr(s.high),
                         s.successes, s.trials])


def write_trace(trace, path: str | os.PathLike) -> None:
    """One JSON object per sell event."""
    with open(path, "w", encoding="utf-8") as fh:
        for event in trace:
            fh.write(json.dumps(event.to_dict()) + "\n")


def report_filename(player: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in player)
    return f"{safe}.json"


def relative(paths: Iterable[Path], root: Path) -> list[str]:
    return sorted(str(p.relative_to(root)) for p in paths)
