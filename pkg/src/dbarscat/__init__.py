"""Direct and inverse scattering for the zero-energy 2-D Schrodinger operator.

Modules
-------
grid, fieldio   periodic grids, spectral operators, the DFLD1 file format
greens          the Faddeev Green's function g_k
potentials      test potentials, the zero-energy profile psi0, classification
forward         CGO solutions, the scattering transform t(k), k-scans
asymptotics     small-k law, scaling law, large-k decay
inverse         d-bar equation in k and reconstruction of q
nv              Novikov-Veselov evolution and a PDE oracle
estimators      scikit-learn style wrappers
cli             command-line front end
"""

__version__ = "0.1.0"
