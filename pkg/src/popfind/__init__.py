"""Decision-theoretic subgroup finding for time-to-event and toxicity trial data."""

__version__ = "0.1.0"
