"""Command-line pipeline: scene loading, task setup, render/eval/ablate/convert runs."""
