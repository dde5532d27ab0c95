"""Synthetic lesion cohorts and label-volume series for desk-scale verification."""
