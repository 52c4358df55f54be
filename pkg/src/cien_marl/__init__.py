"""Decentralized soft actor-critic with collective influence estimation.

Modules: :mod:`nn` (dense nets, backprop, Adam), :mod:`env` (disk-lift
surrogate), :mod:`cien` (influence estimator), :mod:`sac` (policy, critics,
updates), :mod:`replay`, :mod:`harness` (training/evaluation) and :mod:`cli`.
"""

__version__ = "0.1.0"
