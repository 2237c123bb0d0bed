"""Full-catalog versus sampled evaluation of sequential recommenders."""

__version__ = "0.1.0"
