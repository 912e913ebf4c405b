"""Multi-microphone speech activity and overlap detection with a steerable beamformer front-end."""

__version__ = "0.1.0"
