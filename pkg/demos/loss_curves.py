"""Print the robust loss family side by side.

    python demos/loss_curves.py

Least squares and absolute loss grow without bound. Welsch and Geman-McClure
flatten out near 1, which is why large residuals stop pulling on the fit.
The Taylor column shows where Welsch still looks quadratic.
"""

import numpy as np

from robustot import LossKind, emit_loss_curves

sigma = 1.0
kinds = [LossKind.least_squares(), LossKind.absolute(),
         LossKind.welsch(sigma), LossKind.geman_mcclure(sigma)]
cols = emit_loss_curves(kinds, np.linspace(0, 5, 11))
names = list(cols)
print("  ".join(f"{n:>12}" for n in names))
for row in zip(*(cols[n] for n in names)):
    print("  ".join(f"{v:12.5f}" for v in row))
