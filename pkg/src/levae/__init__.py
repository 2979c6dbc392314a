"""Edit-distance-guided latent-variable sequence models, desk scale.

A latent sequence model trained by distilling the Levenshtein
optimal-completion oracle, together with the exact small-instance machinery
(sequence enumeration, Gauss-Hermite quadrature, certified partition
functions) needed to verify its kernel-density objective and KL upper
bounds.
"""

__version__ = "0.1.0"
