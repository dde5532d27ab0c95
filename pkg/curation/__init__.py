"""Ingestion, quality control, lesion tracking and grid resampling."""
