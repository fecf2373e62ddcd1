"""Multi-view DeepID face identification on synthetic multi-view faces."""

__version__ = "0.1.0"
