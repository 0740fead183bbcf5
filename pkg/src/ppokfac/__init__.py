"""PPO with Kronecker-factored natural gradients, plus a first-order PPO baseline.

Everything is plain numpy: networks, curvature factors, environments and the
training loop are written out by hand so that each piece can be checked
against a brute-force oracle.
"""

__version__ = "0.1.0"
