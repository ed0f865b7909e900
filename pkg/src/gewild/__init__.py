"""Privacy-compliant multimodal group-emotion recognition at configurable scale."""

__version__ = "0.1.0"

CLASS_NAMES = ("negative", "neutral", "positive")
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}
