"""Multi-task ensemble for emotion and sentiment classification and intensity regression."""

__version__ = "0.1.0"
