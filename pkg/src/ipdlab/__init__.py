"""Strategy inference for the iterated prisoner's dilemma: simulation,
conditional-action encoding, two-stage clustering and left-to-right HMMs."""

__version__ = "0.1.0"
