"""Does the risk ordering of bins matter?  Compare ranked bins with shuffled ones."""
from rltrader.fit import scrambled_experiment
from rltrader.model import ModelParams
from rltrader.risk import classify
from rltrader.sim import AgentSpec, MarketSpec, generate_agent_history, generate_market


def main():
    market = generate_market(MarketSpec(horizon_days=300, seed=7))
    ranked = classify(market.stocks, market.benchmark)
    agents = {"learner": ModelParams(0.8, 20.0), "coin flipper": ModelParams(0.8, 0.0)}
    for name, params in agents.items():
        run = generate_agent_history(AgentSpec(params, 150, seed=0), market)
        res = scrambled_experiment(run.history, ranked, n_scrambles=100, seed=0)
        s = res.stat
        print(f"{name:13s} ranked BIC {res.ranked_bic:7.2f}  better than "
              f"{s.successes}/{s.trials} scrambles, 99% CI [{s.low:.3f}, {s.high:.3f}]")


if __name__ == "__main__":
    main()
