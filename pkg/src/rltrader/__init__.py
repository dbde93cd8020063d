"""Q-learning models of stock-market investors."""
