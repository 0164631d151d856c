"""Few-shot physical reasoning over simulated disc worlds.

Builds video sets (one target plus four short references over a shared
object roster), infers hidden mass and charge from interactions, predicts
factual/counterfactual/future dynamics, and answers program-annotated
questions with a symbolic executor. Both exact (simulator-backed) and
learned (graph-network) back-ends are provided.
"""

__version__ = "0.1.0"
