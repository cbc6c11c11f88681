"""3D axis visual prompting toolkit for multimodal language models."""

__version__ = "0.1.0"
