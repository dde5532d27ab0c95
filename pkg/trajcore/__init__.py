"""Domain types, volumetric response classification and transition flows."""
