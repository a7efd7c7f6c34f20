"""
Reverse-mode gradients and the finite-difference check
=======================================================

Every model in ``tabbias`` is trained with the small autodiff engine in
``tabbias.diffcore``. This script builds a tiny MLP loss, takes its
gradient, and compares a few coordinates with central differences.
"""

import numpy as np

from tabbias.diffcore import MlpSpec, grad_check, init_params, loss_and_grad, mlp_forward

###############################################################################
# A two-layer network regressing a noisy sine.

rng = np.random.default_rng(0)
x = rng.uniform(-2, 2, size=(64, 1))
y = np.sin(x) + 0.1 * rng.standard_normal(x.shape)

spec = MlpSpec((1, 16, 1), hidden_activation="tanh")
params = init_params(spec, seed=0)
print("parameters:", len(params))


def mse(tensors, batch):
    xb, yb = batch
    r = mlp_forward(spec, tensors, xb) - yb
    return (r * r).mean()


loss, grad = loss_and_grad(mse, params, (x, y))
print(f"loss {loss:.4f}, gradient norm {np.linalg.norm(grad.flat):.4f}")

###############################################################################
# ``grad_check`` perturbs random coordinates by +-h and reports the
# relative error of each one.

report = grad_check(mse, params, (x, y), tolerance=1e-3, n_coords=20, seed=1)
print(f"max relative error {report.max_rel_error:.2e}, flagged {report.flagged}")
