"""Neural-network equalizers for ISI channels, with LMMSE and BCJR baselines."""

__version__ = "0.1.0"
