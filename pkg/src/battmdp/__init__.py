"""Battery dispatch under load uncertainty via an average-cost Markov decision process."""

__version__ = "0.1.0"
