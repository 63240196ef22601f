# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels for three-layer networks.

Generator: tanh, tanh, identity. Critic: relu, relu, identity, scalar output.
Parameters arrive as the flat buffers of ``migan.nn.MlpParams``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void mm(bint ta, bint tb, int M, int N, int K, double alpha,
                    const double* A, const double* B, double beta, double* C) noexcept nogil:
    # row-major C[M,N] = alpha * op(A) @ op(B) + beta * C, computed as C^T in column-major
    cdef char ca = b't' if ta else b'n'
    cdef char cb = b't' if tb else b'n'
    cdef int lda = M if ta else K
    cdef int ldb = K if tb else N
    cdef int ldc = N
    if M == 0 or N == 0:
        return
    dgemm(&cb, &ca, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


cdef inline void add_bias(double* Z, const double* b, int rows, int cols, int act) noexcept nogil:
    # act: 0 identity, 1 relu
    cdef int i, j
    cdef double v
    for i in range(rows):
        for j in range(cols):
            v = Z[i * cols + j] + b[j]
            if act == 1:
                v = v if v > 0.0 else 0.0
            Z[i * cols + j] = v


cdef inline void colsum(const double* A, int rows, int cols, double* out, double beta) noexcept nogil:
    cdef int i, j
    for j in range(cols):
        out[j] = beta * out[j]
    for i in range(rows):
        for j in range(cols):
            out[j] += A[i * cols + j]


cdef inline void relu_gate(double* A, const double* H, Py_ssize_t n) noexcept nogil:
    # multiply by relu'(z) using the post-activation: relu(z) > 0 iff z > 0
    cdef Py_ssize_t i
    for i in range(n):
        if H[i] <= 0.0:
            A[i] = 0.0


cdef inline void critic_input_grad(const double* H1, const double* H2, const double* W1,
                                   const double* W2, const double* w3, int B, int p,
                                   int h1, int h2, double* d1, double* d2, double* g) noexcept nogil:
    # d2 = s2 * w3 ; d1 = s1 * (d2 @ W2) ; g = d1 @ W1
    cdef int i, j
    for i in range(B):
        for j in range(h2):
            d2[i * h2 + j] = w3[j] if H2[i * h2 + j] > 0.0 else 0.0
    mm(False, False, B, h1, h2, 1.0, d2, W2, 0.0, d1)
    relu_gate(d1, H1, <Py_ssize_t>B * h1)
    mm(False, False, B, p, h1, 1.0, d1, W1, 0.0, g)


cdef inline void critic_forward(const double* X, const double* W1, const double* b1,
                                const double* W2, const double* b2, const double* w3,
                                double b3, int B, int p, int h1, int h2,
                                double* H1, double* H2, double* out) noexcept nogil:
    cdef int i, j
    cdef double acc
    mm(False, True, B, h1, p, 1.0, X, W1, 0.0, H1)
    add_bias(H1, b1, B, h1, 1)
    mm(False, True, B, h2, h1, 1.0, H1, W2, 0.0, H2)
    add_bias(H2, b2, B, h2, 1)
    for i in range(B):
        acc = b3
        for j in range(h2):
            acc += H2[i * h2 + j] * w3[j]
        out[i] = acc


cdef void generator_forward(const double* X, const double* Z, const double* m,
                           const double* V1, const double* c1, const double* V2,
                           const double* c2, const double* V3, const double* c3,
                           int B, int p, int q1, int q2, double* inp,
                           object A1_arr, object A2_arr, double* O, double* Xh):
    # tanh runs through numpy's vectorized loop, which beats scalar libm here
    cdef double[:, ::1] A1v = A1_arr, A2v = A2_arr
    cdef double* A1 = &A1v[0, 0]
    cdef double* A2 = &A2v[0, 0]
    cdef int i, j
    cdef Py_ssize_t k
    with nogil:
        for i in range(B):
            for j in range(p):
                k = <Py_ssize_t>i * p + j
                inp[k] = X[k] * m[j] + Z[k] * (1.0 - m[j])
        mm(False, True, B, q1, p, 1.0, inp, V1, 0.0, A1)
        add_bias(A1, c1, B, q1, 0)
    np.tanh(A1_arr, out=A1_arr)
    with nogil:
        mm(False, True, B, q2, q1, 1.0, A1, V2, 0.0, A2)
        add_bias(A2, c2, B, q2, 0)
    np.tanh(A2_arr, out=A2_arr)
    with nogil:
        mm(False, True, B, p, q2, 1.0, A2, V3, 0.0, O)
        add_bias(O, c3, B, p, 0)
        for i in range(B):
            for j in range(p):
                k = <Py_ssize_t>i * p + j
                Xh[k] = X[k] * m[j] + O[k] * (1.0 - m[j])


def gen_forward(double[::1] gdata, int q1, int q2,
                double[:, ::1] X, double[:, ::1] Z, double[::1] m):
    cdef int B = X.shape[0], p = X.shape[1]
    cdef double* G = &gdata[0]
    cdef double* V1 = G
    cdef double* c1 = V1 + q1 * p
    cdef double* V2 = c1 + q1
    cdef double* c2 = V2 + q2 * q1
    cdef double* V3 = c2 + q2
    cdef double* c3 = V3 + p * q2
    raw = np.empty((B, p))
    xhat = np.empty((B, p))
    if B == 0:
        return raw, xhat
    cdef double[:, ::1] O = raw, Xh = xhat
    cdef double[:, ::1] inp = np.empty((B, p))
    generator_forward(&X[0, 0], &Z[0, 0], &m[0], V1, c1, V2, c2, V3, c3, B, p, q1, q2,
                      &inp[0, 0], np.empty((B, q1)), np.empty((B, q2)), &O[0, 0], &Xh[0, 0])
    return raw, xhat


def critic_step(double[::1] ddata, int h1, int h2, double[:, ::1] real,
                double[:, ::1] fake, double[::1] eps, double lam):
    cdef int B = real.shape[0], p = real.shape[1]
    cdef int B2 = 2 * B
    cdef int i, j
    cdef Py_ssize_t k
    if B == 0:
        raise ValueError("empty batch")
    cdef double* D = &ddata[0]
    cdef double* W1 = D
    cdef double* b1 = W1 + h1 * p
    cdef double* W2 = b1 + h1
    cdef double* b2 = W2 + h2 * h1
    cdef double* w3 = b2 + h2
    cdef double b3 = w3[h2]

    grad_arr = np.zeros(ddata.shape[0])
    cdef double[::1] gv = grad_arr
    cdef double* gW1 = &gv[0]
    cdef double* gb1 = gW1 + h1 * p
    cdef double* gW2 = gb1 + h1
    cdef double* gb2 = gW2 + h2 * h1
    cdef double* gw3 = gb2 + h2
    cdef double* gb3 = gw3 + h2

    cdef double[:, ::1] S = np.empty((B2, p))
    cdef double[:, ::1] H1 = np.empty((B2, h1)), H2 = np.empty((B2, h2))
    cdef double[:, ::1] dH1 = np.empty((B2, h1)), dZ2 = np.empty((B2, h2))
    cdef double[::1] out = np.empty(B2)
    cdef double[:, ::1] T = np.empty((B, p)), G = np.empty((B, p))
    cdef double[:, ::1] d1 = np.empty((B, h1)), d2 = np.empty((B, h2))
    cdef double[::1] coef = np.empty(B)
    cdef double loss = 0.0, u, e, nrm, pen = 0.0, invB = 1.0 / B
    cdef int zero = 0

    with nogil:
        for i in range(B):
            for j in range(p):
                S[i, j] = fake[i, j]
                S[B + i, j] = real[i, j]
                e = eps[i]
                T[i, j] = e * real[i, j] + (1.0 - e) * fake[i, j]

        # Wasserstein term: mean D(fake) - mean D(real)
        critic_forward(&S[0, 0], W1, b1, W2, b2, w3, b3, B2, p, h1, h2,
                       &H1[0, 0], &H2[0, 0], &out[0])
        for i in range(B2):
            u = invB if i < B else -invB
            loss += u * out[i]
            gb3[0] += u
            for j in range(h2):
                gw3[j] += u * H2[i, j]
                dZ2[i, j] = u * w3[j] if H2[i, j] > 0.0 else 0.0
        mm(True, False, h2, h1, B2, 1.0, &dZ2[0, 0], &H1[0, 0], 0.0, gW2)
        colsum(&dZ2[0, 0], B2, h2, gb2, 0.0)
        mm(False, False, B2, h1, h2, 1.0, &dZ2[0, 0], W2, 0.0, &dH1[0, 0])
        relu_gate(&dH1[0, 0], &H1[0, 0], <Py_ssize_t>B2 * h1)
        mm(True, False, h1, p, B2, 1.0, &dH1[0, 0], &S[0, 0], 0.0, gW1)
        colsum(&dH1[0, 0], B2, h1, gb1, 0.0)

        # gradient penalty at the interpolates, differentiated through grad_x D
        critic_forward(&T[0, 0], W1, b1, W2, b2, w3, b3, B, p, h1, h2,
                       &H1[0, 0], &H2[0, 0], &out[0])
        critic_input_grad(&H1[0, 0], &H2[0, 0], W1, W2, w3, B, p, h1, h2,
                          &d1[0, 0], &d2[0, 0], &G[0, 0])
        for i in range(B):
            nrm = 0.0
            for j in range(p):
                nrm += G[i, j] * G[i, j]
            nrm = sqrt(nrm)
            pen += lam * (nrm - 1.0) * (nrm - 1.0)
            if nrm == 0.0:
                zero += 1
                coef[i] = 0.0
            else:
                coef[i] = 2.0 * lam * (nrm - 1.0) / nrm * invB
            for j in range(p):
                G[i, j] *= coef[i]
        loss += pen * invB
        # c0 = G (scaled); gW1 += d1^T c0
        mm(True, False, h1, p, B, 1.0, &d1[0, 0], &G[0, 0], 1.0, gW1)
        # c1 = s1 * (c0 @ W1^T) ; gW2 += d2^T c1
        mm(False, True, B, h1, p, 1.0, &G[0, 0], W1, 0.0, &dH1[0, 0])
        relu_gate(&dH1[0, 0], &H1[0, 0], <Py_ssize_t>B * h1)
        mm(True, False, h2, h1, B, 1.0, &d2[0, 0], &dH1[0, 0], 1.0, gW2)
        # c2 = s2 * (c1 @ W2^T) ; gw3 += sum_i c2
        mm(False, True, B, h2, h1, 1.0, &dH1[0, 0], W2, 0.0, &dZ2[0, 0])
        relu_gate(&dZ2[0, 0], &H2[0, 0], <Py_ssize_t>B * h2)
        colsum(&dZ2[0, 0], B, h2, gw3, 1.0)

    return loss, grad_arr, zero


def generator_step(double[::1] gdata, int q1, int q2, double[::1] ddata, int h1, int h2,
                   double[:, ::1] X, double[:, ::1] Z, double[::1] m, double lam):
    cdef int B = X.shape[0], p = X.shape[1]
    cdef int i, j
    cdef Py_ssize_t k
    if B == 0:
        raise ValueError("empty batch")
    cdef double* Gp = &gdata[0]
    cdef double* V1 = Gp
    cdef double* c1 = V1 + q1 * p
    cdef double* V2 = c1 + q1
    cdef double* c2 = V2 + q2 * q1
    cdef double* V3 = c2 + q2
    cdef double* c3 = V3 + p * q2
    cdef double* Dp = &ddata[0]
    cdef double* W1 = Dp
    cdef double* b1 = W1 + h1 * p
    cdef double* W2 = b1 + h1
    cdef double* b2 = W2 + h2 * h1
    cdef double* w3 = b2 + h2
    cdef double b3 = w3[h2]

    grad_arr = np.zeros(gdata.shape[0])
    cdef double[::1] gv = grad_arr
    cdef double* gV1 = &gv[0]
    cdef double* gc1 = gV1 + q1 * p
    cdef double* gV2 = gc1 + q1
    cdef double* gc2 = gV2 + q2 * q1
    cdef double* gV3 = gc2 + q2
    cdef double* gc3 = gV3 + p * q2

    cdef double[:, ::1] inp = np.empty((B, p)), O = np.empty((B, p)), Xh = np.empty((B, p))
    A1_arr, A2_arr = np.empty((B, q1)), np.empty((B, q2))
    cdef double[:, ::1] A1 = A1_arr, A2 = A2_arr
    cdef double[:, ::1] H1 = np.empty((B, h1)), H2 = np.empty((B, h2))
    cdef double[:, ::1] d1 = np.empty((B, h1)), d2 = np.empty((B, h2)), gx = np.empty((B, p))
    cdef double[:, ::1] dA1 = np.empty((B, q1)), dA2 = np.empty((B, q2))
    cdef double[::1] out = np.empty(B)
    cdef double loss = 0.0, rec = 0.0, diff, sgn, invB = 1.0 / B, a

    generator_forward(&X[0, 0], &Z[0, 0], &m[0], V1, c1, V2, c2, V3, c3, B, p, q1, q2,
                      &inp[0, 0], A1_arr, A2_arr, &O[0, 0], &Xh[0, 0])
    with nogil:
        critic_forward(&Xh[0, 0], W1, b1, W2, b2, w3, b3, B, p, h1, h2,
                       &H1[0, 0], &H2[0, 0], &out[0])
        for i in range(B):
            loss -= out[i]
        critic_input_grad(&H1[0, 0], &H2[0, 0], W1, W2, w3, B, p, h1, h2,
                          &d1[0, 0], &d2[0, 0], &gx[0, 0])
        # gx becomes dLoss/dO in place
        for i in range(B):
            for j in range(p):
                diff = X[i, j] - O[i, j]
                rec += fabs(diff)
                sgn = 1.0 if diff > 0.0 else (-1.0 if diff < 0.0 else 0.0)
                gx[i, j] = (-(1.0 - m[j]) * gx[i, j] - lam * sgn) * invB
        loss = (loss + lam * rec) * invB

        mm(True, False, p, q2, B, 1.0, &gx[0, 0], &A2[0, 0], 0.0, gV3)
        colsum(&gx[0, 0], B, p, gc3, 0.0)
        mm(False, False, B, q2, p, 1.0, &gx[0, 0], V3, 0.0, &dA2[0, 0])
        for k in range(<Py_ssize_t>B * q2):
            a = (&A2[0, 0])[k]
            (&dA2[0, 0])[k] *= 1.0 - a * a
        mm(True, False, q2, q1, B, 1.0, &dA2[0, 0], &A1[0, 0], 0.0, gV2)
        colsum(&dA2[0, 0], B, q2, gc2, 0.0)
        mm(False, False, B, q1, q2, 1.0, &dA2[0, 0], V2, 0.0, &dA1[0, 0])
        for k in range(<Py_ssize_t>B * q1):
            a = (&A1[0, 0])[k]
            (&dA1[0, 0])[k] *= 1.0 - a * a
        mm(True, False, q1, p, B, 1.0, &dA1[0, 0], &inp[0, 0], 0.0, gV1)
        colsum(&dA1[0, 0], B, q1, gc1, 0.0)

    return loss, grad_arr


def adam_inplace(double[::1] data, double[::1] grad, double[::1] m1, double[::1] m2,
                 long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = data.shape[0]
    cdef double g, c1 = 1.0 - beta1 ** t, c2 = 1.0 - beta2 ** t
    with nogil:
        for i in range(n):
            g = grad[i]
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * g
            m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g
            data[i] -= lr * (m1[i] / c1) / (sqrt(m2[i] / c2) + eps)
