"""Global tolerance ladder.

Every numerical check in the package draws its tolerance from this ladder
instead of inventing a local constant.  The four rungs correspond to the
four kinds of statements the code makes:

* construction-time identities (hermiticity, normalization): ``CONSTRUCTION``
* algebraic identities between exactly representable objects: ``ALGEBRA``
* deterministic quadrature / integration results: ``QUADRATURE``
* Monte Carlo estimates, expressed in standard errors: ``MC_SIGMA``
"""

CONSTRUCTION = 1e-12
ALGEBRA = 1e-10
QUADRATURE = 1e-6
MC_SIGMA = 3.0
