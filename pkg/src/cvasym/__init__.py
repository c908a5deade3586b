"""Asymptotics of hold-out and V-fold cross-validation for cosine-series density estimation."""
