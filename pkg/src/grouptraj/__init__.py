"""Group-aware relational reasoning for multi-agent trajectory prediction."""

__version__ = "0.1.0"
