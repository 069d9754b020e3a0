"""Limit order book reconstruction and survival analysis of limit order
fill times: LOBSTER-style I/O, a synthetic stream generator, an
event-by-event book engine, hypothetical order probes, classical survival
estimators, and a monotonic encoder-decoder neural survival model trained
on the right-censored log-likelihood."""

__version__ = "0.1.0"
