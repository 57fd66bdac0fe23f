"""Wide-deep spectral models tuned by Bayesian architecture search, for grading
woody breast in hyperspectral scans of chicken fillets."""

__version__ = "0.1.0"
