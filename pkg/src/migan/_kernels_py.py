"""Numpy implementations of the training kernels (any depth, any activations)."""

import numpy as np

from . import nn


def gen_forward(G, X, Z, m):
    """Masked generator pass. Returns ``(raw, xhat)``."""
    inp = X * m + Z * (1.0 - m)
    raw = nn.forward_cache(G, inp)[0][-1]
    xhat = X * m + raw * (1.0 - m)
    return raw, xhat


def critic_step(D, real, fake, eps, lam):
    """Mean WGAN-GP critic loss over the batch and its flat parameter gradient."""
    B = real.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    nn._check_penalty_net(D)
    tilde = eps[:, None] * real + (1.0 - eps[:, None]) * fake
    stacked = np.concatenate([fake, real])
    acts, zs = nn.forward_cache(D, stacked)
    out = acts[-1][:, 0]
    loss = out[:B].mean() - out[B:].mean()
    up = np.empty((2 * B, 1))
    up[:B] = 1.0 / B
    up[B:] = -1.0 / B
    grad = nn.backprop(D, acts, zs, up)[0]

    acts_t, zs_t = nn.forward_cache(D, tilde)
    pen, pgrad, zero = nn.penalty_from_cache(D, acts_t, zs_t, lam, scale=1.0 / B)
    return loss + pen / B, grad + pgrad, zero


def generator_step(G, D, X, Z, m, lam):
    """Mean generator loss ``-D(xhat) + lam * ||x - raw||_1`` and its gradient."""
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    inp = X * m + Z * (1.0 - m)
    g_acts, g_zs = nn.forward_cache(G, inp)
    raw = g_acts[-1]
    xhat = X * m + raw * (1.0 - m)
    d_acts, d_zs = nn.forward_cache(D, xhat)
    diff = X - raw
    loss = -d_acts[-1][:, 0].mean() + lam * np.abs(diff).sum(axis=1).mean()

    gx = nn.backprop(D, d_acts, d_zs, np.ones((B, 1)), want_params=False, want_input=True)[1]
    upstream = (-(1.0 - m) * gx - lam * np.sign(diff)) / B
    grad = nn.backprop(G, g_acts, g_zs, upstream)[0]
    return loss, grad


def adam_inplace(data, grad, m1, m2, t, lr, beta1, beta2, eps):
    m1 *= beta1
    m1 += (1.0 - beta1) * grad
    m2 *= beta2
    m2 += (1.0 - beta2) * grad * grad
    mhat = m1 / (1.0 - beta1 ** t)
    vhat = m2 / (1.0 - beta2 ** t)
    data -= lr * mhat / (np.sqrt(vhat) + eps)
