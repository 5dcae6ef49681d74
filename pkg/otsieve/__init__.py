"""
Sieve estimation of multidimensional matching models solved as discrete
optimal transport problems.
"""
__version__ = "0.1.0"
