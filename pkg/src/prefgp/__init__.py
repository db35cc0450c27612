"""Preference-steered symbolic regression.

Evolves small symbolic models under two objectives (training error and a
personalized interpretability score) where the interpretability scorer is a
ranking network trained online from pairwise feedback with uncertainty-driven
query selection. Ships oracle users so every experiment runs headless, a
session API for human feedback, and a CLI for batch experiments.
"""

__version__ = "0.1.0"
