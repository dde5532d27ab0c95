"""Evaluation layer: cross-validation protocol, AUC statistics and reports."""
