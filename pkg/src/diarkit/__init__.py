"""Speaker diarization toolkit: audio prep, labels, features and from-scratch classifiers."""

__version__ = "0.1.0"
