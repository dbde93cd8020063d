"""Simulate a single Q-learning trader, write its log to CSV, read it back and fit it."""
import io

from rltrader.fit import bic, fit_player, likelihood_ratio_test, random_fit
from rltrader.ingest import build_histories, format_transactions, parse_transactions
from rltrader.model import ModelParams, replay_nll
from rltrader.sim import AgentSpec, MarketSpec, generate_agent_history, generate_market

TRUE = ModelParams(alpha=0.8, beta=20.0, gamma=0.0)


def main():
    market = generate_market(MarketSpec(horizon_days=520, seed=1))
    run = generate_agent_history(AgentSpec(TRUE, n_sells=300, seed=4), market)

    # round trip through the CSV format the fitter normally reads
    text = format_transactions([("agent", t) for t in run.history.transactions])
    records, diags = parse_transactions(io.StringIO(text))
    (history,), _ = build_histories(records)
    print(f"{len(history.transactions)} transactions, {history.n_sells} sells, "
          f"{len(diags)} diagnostics")

    bins = market.classification()
    truth, trace = replay_nll(history, bins, TRUE)
    print("first sells:")
    for e in trace[:3]:
        print(f"  {e.stock} bin {e.action} reward {e.raw_reward:+9.2f} "
              f"p={[round(p, 3) for p in e.probs]}")

    rand = random_fit(history.n_sells)
    myopic = fit_player(history, bins, "myopic")
    full = fit_player(history, bins, "full", myopic=myopic)
    print(f"NLL random {rand.nll:.2f}  myopic {myopic.nll:.2f}  full {full.nll:.2f}"
          f"  (true params {truth:.2f})")
    print("myopic estimate:", {k: round(v, 3) for k, v in myopic.params_dict().items()})

    for nested, fuller in [(rand, myopic), (myopic, full), (rand, full)]:
        c = likelihood_ratio_test(nested, fuller)
        print(f"{fuller.model} vs {nested.model}: stat {c.statistic:.2f} "
              f"crit {c.critical_value:.3f} p {c.p_value:.3g}")
    for f in (rand, myopic, full):
        print(f"BIC {f.model:7s} {bic(f.nll, f.n_params, f.n_obs):.2f}")


if __name__ == "__main__":
    main()
