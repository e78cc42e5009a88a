"""Training/evaluation harness: data, config, training loop, ablation, CLI."""
