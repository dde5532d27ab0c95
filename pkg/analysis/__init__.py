"""Analysis layer: trajectory clustering and feature-space assembly."""
