"""Fit a mixed population and ask whether more players learn than chance would allow."""
from rltrader.fit import FitConfig
from rltrader.model import ModelParams
from rltrader.report import fit_all_models, population_summary
from rltrader.sim import MarketSpec, generate_market, simulate_population


def main():
    market = generate_market(MarketSpec(seed=3))
    bins = market.classification()
    runs = simulate_population(market, 23, ModelParams(0.8, 20.0), 15, seed=1, hold_days=3)
    runs += simulate_population(market, 23, ModelParams(0.8, 0.0), 15, seed=2, hold_days=3)

    fits = [fit_all_models(r.history, bins, FitConfig()) for r in runs]
    for threshold in (0.5, 0.05):
        s = population_summary(fits, confidence=0.99, chance_threshold=threshold)
        print(f"threshold {threshold}: {s['successes']}/{s['trials']} beat random, "
              f"CI [{s['ci_low']:.3f}, {s['ci_high']:.3f}] -> {s['verdict']}")


if __name__ == "__main__":
    main()
