"""Prediction models: gradient-boosted trees and the temporal graph-attention network."""
