"""Walking speed from GPS tracks: ingestion, cleaning, terrain enrichment and speed models."""

from .models import DEFAULT_COEFFICIENTS, Glm, GlmCoefficients, Naismith, SpeedQuery, Tobler, glm_speed, naismith_speed, tobler_speed

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_COEFFICIENTS", "Glm", "GlmCoefficients", "Naismith", "SpeedQuery", "Tobler",
    "glm_speed", "naismith_speed", "tobler_speed", "__version__",
]
