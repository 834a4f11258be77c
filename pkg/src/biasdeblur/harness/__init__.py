"""Configuration, run persistence, scripted experiments, reports and the CLI."""
