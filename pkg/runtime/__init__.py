"""Runtime components: configuration, stage pipeline, CLI and worker pool."""
