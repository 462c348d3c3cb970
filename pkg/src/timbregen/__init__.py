"""Text-guided generation and editing of musical note timbres."""

__version__ = "0.1.0"
