"""
Backend selection for the training kernels.

The compiled extension is used when it imports and the networks have the
standard shape (three linear layers; tanh generator, relu critic). Anything
else, or ``MIGAN_BACKEND=python`` in the environment, uses the numpy code.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _ext
except ImportError:  # extension not built
    _ext = None

BACKEND = "cython" if _ext is not None and os.environ.get("MIGAN_BACKEND", "").lower() != "python" else "python"


def available_backends():
    return ("cython", "python") if _ext is not None else ("python",)


def _use_ext(backend):
    backend = backend or BACKEND
    if backend == "cython" and _ext is None:
        raise RuntimeError("compiled kernels are not available")
    return backend == "cython"


def _gen_ok(G):
    return G.n_layers == 3 and G.activations == ("tanh", "tanh", "identity")


def _critic_ok(D):
    return D.n_layers == 3 and D.d_out == 1 and D.activations == ("relu", "relu", "identity")


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def gen_forward(G, X, Z, m, backend=None):
    """``(raw, xhat)`` for a batch; ``xhat`` keeps the masked-in entries of ``X``."""
    if _use_ext(backend) and _gen_ok(G):
        return _ext.gen_forward(G.data, G.sizes[1], G.sizes[2], _c(X), _c(Z), _c(m))
    return _kernels_py.gen_forward(G, _c(X), _c(Z), _c(m))


def critic_step(D, real, fake, eps, lam, backend=None):
    """``(loss, flat grad, zero-norm count)`` of the mean WGAN-GP critic loss."""
    if _use_ext(backend) and _critic_ok(D):
        return _ext.critic_step(D.data, D.sizes[1], D.sizes[2], _c(real), _c(fake),
                                _c(eps), float(lam))
    return _kernels_py.critic_step(D, _c(real), _c(fake), _c(eps), lam)


def generator_step(G, D, X, Z, m, lam, backend=None):
    """``(loss, flat grad)`` of the mean generator loss w.r.t. the generator."""
    if _use_ext(backend) and _gen_ok(G) and _critic_ok(D):
        return _ext.generator_step(G.data, G.sizes[1], G.sizes[2], D.data, D.sizes[1],
                                   D.sizes[2], _c(X), _c(Z), _c(m), float(lam))
    return _kernels_py.generator_step(G, D, _c(X), _c(Z), _c(m), lam)


def adam_inplace(data, grad, m1, m2, t, lr, beta1, beta2, eps, backend=None):
    if _use_ext(backend):
        _ext.adam_inplace(data, _c(grad), m1, m2, int(t), lr, beta1, beta2, eps)
    else:
        _kernels_py.adam_inplace(data, grad, m1, m2, t, lr, beta1, beta2, eps)
