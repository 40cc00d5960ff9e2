"""Figure rendering for wavefio .fgrid artifacts."""

__version__ = "0.1.0"
