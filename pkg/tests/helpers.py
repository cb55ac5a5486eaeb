"""Shared test oracles: finite differences and gradient checking.

These stay deliberately independent of the autodiff engine's internals:
the finite-difference oracle only perturbs leaf arrays and re-runs the
forward builder.
"""

import numpy as np

RTOL = 1e-4
ATOL = 1e-6
FD_STEP = 1e-3


def finite_difference(scalar_fn, x, step=FD_STEP):
    """Central-difference gradient of ``scalar_fn()`` w.r.t. array ``x``.

    ``x`` is perturbed in place and restored; the function must read the
    current contents of ``x`` on every call.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = scalar_fn()
        flat[i] = orig - step
        lo = scalar_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_gradients(build, leaves, rtol=RTOL, atol=ATOL, step=FD_STEP):
    """Compare backward-sweep adjoints to finite differences for each leaf.

    ``build()`` must construct a fresh scalar Tensor from the given leaf
    tensors (reading their current ``.data``).
    """
    for leaf in leaves:
        leaf.zero_grad()
    root = build()
    root.backward()
    for leaf in leaves:
        numeric = finite_difference(lambda: build().item(), leaf.data, step=step)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def rng_for(*entropy):
    return np.random.default_rng(list(entropy))
