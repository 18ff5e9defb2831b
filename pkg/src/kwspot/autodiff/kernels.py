"""Convolution gather/scatter kernels (NHWC layout).

im2col / col2im are the memory-bound hot loops of conv2d; the actual
multiply-accumulate goes through one large BLAS matmul either way.  In
NHWC the innermost copy is a contiguous run of KW*C floats, which is what
makes these loops fast.  Numba variants are the default; the pure-numpy
path is selected via ``KWSPOT_NUMBA=0``.

Shapes: padded input (B, Hp, Wp, C) -> cols (B, Ho, Wo, KH*KW*C) with the
last axis ordered (ky, kx, c).
"""

import numpy as np

from ..backend import NUMBA_ENABLED

if NUMBA_ENABLED:
    from numba import njit

    # Serial on purpose: these loops interleave with multi-threaded BLAS
    # matmuls, and a second spinning thread pool stalls both on small hosts.

    @njit(fastmath=True, cache=True)
    def _im2col_nb(xp, kh, kw, sy, sx, ho, wo, cols):
        B, Hp, Wp, C = xp.shape
        run = kw * C
        flat = xp.reshape(B, Hp, Wp * C)
        for b in range(B):
            for oy in range(ho):
                dst = cols[b, oy]
                for ky in range(kh):
                    row = flat[b, oy * sy + ky]
                    base = ky * run
                    for ox in range(wo):
                        off = ox * sx * C
                        dst[ox, base : base + run] = row[off : off + run]

    @njit(fastmath=True, cache=True)
    def _col2im_nb(dcols, kh, kw, sy, sx, ho, wo, dxp):
        B, Hp, Wp, C = dxp.shape
        run = kw * C
        flat = dxp.reshape(B, Hp, Wp * C)
        for b in range(B):
            for oy in range(ho):
                src = dcols[b, oy]
                for ky in range(kh):
                    row = flat[b, oy * sy + ky]
                    base = ky * run
                    for ox in range(wo):
                        off = ox * sx * C
                        row[off : off + run] += src[ox, base : base + run]


def _im2col_np(xp, kh, kw, sy, sx, ho, wo, cols):
    C = xp.shape[3]
    view = cols.reshape(cols.shape[0], ho, wo, kh, kw, C)
    for ky in range(kh):
        for kx in range(kw):
            view[:, :, :, ky, kx, :] = xp[:, ky : ky + (ho - 1) * sy + 1 : sy,
                                          kx : kx + (wo - 1) * sx + 1 : sx, :]


def _col2im_np(dcols, kh, kw, sy, sx, ho, wo, dxp):
    C = dxp.shape[3]
    view = dcols.reshape(dcols.shape[0], ho, wo, kh, kw, C)
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, ky : ky + (ho - 1) * sy + 1 : sy,
                kx : kx + (wo - 1) * sx + 1 : sx, :] += view[:, :, :, ky, kx, :]


def im2col(xp: np.ndarray, kh: int, kw: int, sy: int, sx: int, ho: int, wo: int) -> np.ndarray:
    """Unfold padded NHWC input into (B, Ho, Wo, KH*KW*C) patches."""
    B = xp.shape[0]
    C = xp.shape[3]
    cols = np.empty((B, ho, wo, kh * kw * C), dtype=xp.dtype)
    if NUMBA_ENABLED:
        _im2col_nb(xp, kh, kw, sy, sx, ho, wo, cols)
    else:
        _im2col_np(xp, kh, kw, sy, sx, ho, wo, cols)
    return cols


def col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, sy: int, sx: int,
           ho: int, wo: int) -> np.ndarray:
    """Fold patch gradients back onto the padded input (adjoint of im2col)."""
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    if NUMBA_ENABLED:
        _col2im_nb(dcols, kh, kw, sy, sx, ho, wo, dxp)
    else:
        _col2im_np(dcols, kh, kw, sy, sx, ho, wo, dxp)
    return dxp
