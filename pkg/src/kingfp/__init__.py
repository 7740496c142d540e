"""Conservative implicit solver for the 0D-2V axisymmetric multi-species
Fokker-Planck-Rosenbluth collision equation."""

__version__ = "0.1.0"
