"""Multi-speaker DOA and pitch tracking with a labeled multi-Bernoulli filter.

Modules: ``scene`` (array simulation), ``localization`` (MCC-PHAT),
``beamform`` (WLS filter-and-sum), ``pitch``, ``glmb`` (the tracker),
``metrics``, ``pipeline`` and ``cli``.
"""
__version__ = "0.1.0"
