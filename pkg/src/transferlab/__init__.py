"""Monte Carlo laboratory for transfer operators on sequence spaces."""
__version__ = "0.1.0"
