"""Speech-driven facial behavior generation with gender-leakage auditing and debiasing."""

__version__ = "0.1.0"
