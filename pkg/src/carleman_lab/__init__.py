"""carleman_lab: weighted-estimate verifiers and coefficient reconstruction
for the heat equation with spatially varying conductivity."""

__version__ = "0.1.0"
