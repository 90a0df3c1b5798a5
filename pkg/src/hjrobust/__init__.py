"""Weak-factor-robust specification tests for linear asset-pricing models.

Public surface:

* panels      - return/factor panel containers, CSV ingestion, alignment
* moments     - sample second moments and SDF pricing errors
* wchi2       - weighted chi-square distribution machinery and eigenweights
* classic     - HJ distance test, AR statistic, J test, Fama-MacBeth, CRRs
* hjs         - Bonferroni AR-inversion (HJS) specification test
* fourpass    - four-pass SDF coefficient estimator and premia transform
* hjn         - large-N (HJN) specification test
* sim         - calibrated DGPs and the Monte Carlo experiment harness
* cli         - command-line entry point (`hjrobust`)
"""

from . import classic, errors, fourpass, hjn, hjs, moments, panels, sim, wchi2

__all__ = ["classic", "errors", "fourpass", "hjn", "hjs", "moments",
           "panels", "sim", "wchi2"]

__version__ = "0.1.0"
