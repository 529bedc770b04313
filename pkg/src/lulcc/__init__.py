"""Land-cover change modeling with a Gaussian-emission HMM temporal model,
logistic-regression transition potentials and quantum-constrained allocation."""

__version__ = "0.1.0"
