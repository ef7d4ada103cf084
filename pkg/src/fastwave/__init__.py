"""fastwave: numerical workbench for KAM reducibility of fast-driven wave equations."""

__version__ = "0.1.0"
