"""Toolkit for estimating causal effects of latent text properties.

Submodules:
  corpus      -- documents, tokenization, featurization, matching
  simulate    -- outcome simulation, propensities, enumerable worlds
  proxy       -- noisy proxy construction and recall boosting
  adjust      -- learned text representation with per-treatment heads
  estimators  -- tabular contrasts and measurement-model inversion
  theory      -- exact-enumeration checks of the estimand identities
  cli         -- experiment orchestration
"""

from . import adjust, cli, corpus, estimators, proxy, simulate, theory

__all__ = ["adjust", "cli", "corpus", "estimators", "proxy", "simulate", "theory"]
__version__ = "0.1.0"
