"""Synthetic toy body, training, evaluation, ablations and the command line."""
