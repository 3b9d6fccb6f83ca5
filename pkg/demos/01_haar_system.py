"""Haar coefficients, Parseval and the dyadic maximal function on a small grid."""

import numpy as np

from bloomlab import Cube, DyadicGrid, GridFunction, dyadic_maximal, haar_coefficient, parseval_error

grid = DyadicGrid(dim=1, depth=4)
f = GridFunction(grid, np.sin(np.linspace(0, 3, grid.n_leaves)))

print("coefficient of f on [0,1):", haar_coefficient(f, grid.root, 0))
print("coefficient of f on [1/2,3/4):", haar_coefficient(f, Cube(2, (2,)), 0))
print("Parseval defect:", parseval_error(f))

# an indicator has maximal function 1 on itself and decaying averages outside
chi = GridFunction.indicator(grid, Cube(2, (1,)))
print("M(chi) leaf values:", dyadic_maximal(chi).values)
