"""Synthesis of hepatobiliary-phase liver MRI from earlier contrast phases.

Subpackages cover the full desk-scale workflow: synthetic phantom cohorts,
preprocessing, contrast-evolution curation, three generator families,
training, image quality assessment, statistics, and a blinded-read service.
"""

__version__ = "0.1.0"
