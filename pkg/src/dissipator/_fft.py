"""Shared FFT entry points with a process-wide worker count.

All transforms in the package funnel through here so the CLI --threads flag
(or DISSIPATOR_THREADS) applies uniformly.
"""

import os

import numpy as np
import scipy.fft

_workers = None


def set_workers(n):
    """Set the worker count for subsequent transforms (None = scipy default)."""
    global _workers
    _workers = None if n is None else max(1, int(n))


def get_workers():
    if _workers is not None:
        return _workers
    env = os.environ.get("DISSIPATOR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def fftn(a, axes=None):
    return scipy.fft.fftn(a, axes=axes, workers=get_workers())


def ifftn(a, axes=None):
    return scipy.fft.ifftn(a, axes=axes, workers=get_workers())


def rfftn(a, axes=None):
    return scipy.fft.rfftn(a, axes=axes, workers=get_workers())


def irfftn(a, s=None, axes=None):
    return scipy.fft.irfftn(a, s=s, axes=axes, workers=get_workers())


def fft(a, axis=-1):
    return scipy.fft.fft(a, axis=axis, workers=get_workers())


def ifft(a, axis=-1):
    return scipy.fft.ifft(a, axis=axis, workers=get_workers())


def wavenumbers(n):
    """Integer wavenumbers in FFT order for an n-point axis of period 2*pi."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
