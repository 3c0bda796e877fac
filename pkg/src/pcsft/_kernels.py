"""Compiled inner loops for the driver recursion and threshold detectors.

Both kernels consume pre-drawn standard normal pairs so that a chunked run
reproduces a step-by-step run bit for bit.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def ou_path(eta_re, eta_im, a, c, noise, out_re, out_im):
    """Fill out_* with the driver value at the start of each step.

    Returns the driver value after the last step.
    """
    for k in range(noise.shape[0]):
        out_re[k] = eta_re
        out_im[k] = eta_im
        eta_re = a * eta_re + c * noise[k, 0]
        eta_im = a * eta_im + c * noise[k, 1]
    return eta_re, eta_im


@njit(cache=True, nogil=True)
def detect_chunk(eta_re, eta_im, a, c, noise, gains, eps, scale, acc, step0, click_det, click_step):
    """Advance the driver over one chunk and feed every detector.

    Detector j collects ``scale * gains[j] * |eta|^2`` per step and clicks at
    the end of the step in which ``acc[j] >= eps[j]``; the overshoot is
    dropped. Returns (eta_re, eta_im, number of clicks written).
    """
    nd = gains.shape[0]
    nclick = 0
    for k in range(noise.shape[0]):
        e2 = eta_re * eta_re + eta_im * eta_im
        for j in range(nd):
            acc[j] += scale * gains[j] * e2
            if acc[j] >= eps[j]:
                click_det[nclick] = j
                click_step[nclick] = step0 + k + 1
                nclick += 1
                acc[j] = 0.0
        eta_re = a * eta_re + c * noise[k, 0]
        eta_im = a * eta_im + c * noise[k, 1]
    return eta_re, eta_im, nclick


def warmup() -> None:
    noise = np.zeros((1, 2))
    out = np.zeros(1)
    ou_path(0.0, 0.0, 1.0, 0.0, noise, out, out.copy())
    detect_chunk(
        0.0, 0.0, 1.0, 0.0, noise, np.ones(1), np.ones(1), 1.0, np.zeros(1), 0,
        np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
    )
