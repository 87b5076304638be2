# LAFS Source Package
# Latent factor simulation of recommender outputs for fairness-aware re-ranking

__version__ = "1.0.0"
__author__ = "LAFS Team"
