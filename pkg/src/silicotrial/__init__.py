"""In-silico clinical trials with virtual clinicians.

Submodules:

- ``population``  virtual clinician generator (two-stage stratified sampling)
- ``surrogates``  AI-model surrogates with calibrated AUC
- ``features``    clinician / model / patient encoders and PCA reduction
- ``gbt``         gradient-boosted trees with random-search cross-validation
- ``behavior``    clinician-behavior simulator (specialized / generalized)
- ``trial``       trial plans, randomized allocation, in-silico runs, filtering
- ``metrics``     AUC, bootstrap CIs, MAE, ROUGE, breakdowns, time reduction
- ``synth``       synthetic cohorts and an oracle clinician world
- ``io``          CSV / config / bundle persistence
- ``cli``         command-line entry point
"""

SCHEMA_VERSION = "1"

__version__ = "0.1.0"
