"""Estimate CAPM betas on a synthetic market and sort stocks into risk bins."""
import numpy as np

from rltrader.risk import classify, scramble
from rltrader.sim import MarketSpec, generate_market


def main():
    market = generate_market(MarketSpec(seed=0))
    by_beta = classify(market.stocks, market.benchmark, "beta")
    by_risk = classify(market.stocks, market.benchmark, "riskiness")

    print("bin sizes:", by_beta.sizes())
    for b in range(3):
        betas = [by_beta.betas[s] for s, k in by_beta.bins.items() if k == b]
        print(f"bin {b}: beta {min(betas):.2f} .. {max(betas):.2f}")

    hits = np.mean([by_beta.bins[s] == market.true_bins[s] for s in market.true_bins])
    print(f"agreement with generating bins: {hits:.1%}")
    moved = sum(by_beta.bins[s] != by_risk.bins[s] for s in by_beta.bins)
    print(f"stocks that change bin under riskiness scoring: {moved}")

    shuffled = scramble(by_beta, seed=1)
    same = sum(shuffled.bins[s] == by_beta.bins[s] for s in by_beta.bins)
    print(f"scrambled ({shuffled.scheme}): sizes {shuffled.sizes()}, {same} stocks kept their bin")


if __name__ == "__main__":
    main()
