"""Savitzky-Golay smoothing of control sequences."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin


def sg_coefficients(window: int, degree: int) -> np.ndarray:
    """Centre-point weights of the least-squares polynomial fit over ``window`` points.

    Fitting ``sum_i a_i t^i`` to samples at ``t = -k..k`` gives ``a_0 = c . y``;
    ``c`` is the first row of the pseudo-inverse of the Vandermonde matrix.
    """
    window, degree = int(window), int(degree)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if not 0 <= degree < window:
        raise ValueError(f"degree must satisfy 0 <= degree < window, got {degree}")
    k = window // 2
    if degree >= window - 1:
        # the fit interpolates every sample
        coeffs = np.zeros(window)
        coeffs[k] = 1.0
        return coeffs
    # abscissae scaled to [-1, 1]; a_0 is unchanged and the Vandermonde matrix is far better conditioned
    t = np.arange(-k, k + 1, dtype=float) / k
    A = np.vander(t, degree + 1, increasing=True)
    coeffs = np.linalg.pinv(A)[0]
    # symmetrize to remove rounding asymmetry; the exact kernel is symmetric
    return 0.5 * (coeffs + coeffs[::-1])


def _reflect_pad(seq: np.ndarray, k: int) -> np.ndarray:
    # np.pad "reflect" repeats the reflection when k exceeds the length
    if seq.shape[0] == 1:
        return np.repeat(seq, 2 * k + 1, axis=0)
    return np.pad(seq, ((k, k), (0, 0)), mode="reflect")


def sg_smooth(seq, filt) -> np.ndarray:
    """Convolve each column of a ``(T, m)`` sequence with the filter kernel.

    Ends are mirror-padded (reflection about the first and last samples).
    """
    coeffs = filt.coeffs if hasattr(filt, "coeffs") else np.asarray(filt, dtype=float)
    x = np.asarray(seq, dtype=float)
    one_d = x.ndim == 1
    if one_d:
        x = x[:, None]
    if x.shape[0] < 1:
        raise ValueError("sequence must have at least one step")
    k = coeffs.size // 2
    padded = _reflect_pad(x, k)
    T = x.shape[0]
    out = np.zeros_like(x)
    for i, c in enumerate(coeffs):
        out += c * padded[i:i + T]
    return out[:, 0] if one_d else out


class SGFilter(BaseEstimator, TransformerMixin):
    """Savitzky-Golay smoother for ``(T, m)`` sequences (stateless ``fit``)."""

    def __init__(self, window: int = 9, degree: int = 3):
        self.window = window
        self.degree = degree

    @property
    def coeffs(self) -> np.ndarray:
        if getattr(self, "_key", None) != (self.window, self.degree):
            self._coeffs = sg_coefficients(self.window, self.degree)
            self._key = (self.window, self.degree)
        return self._coeffs

    def fit(self, X=None, y=None):
        self.coeffs_ = self.coeffs
        return self

    def transform(self, X):
        return sg_smooth(X, self.coeffs)

    @classmethod
    def identity(cls) -> "SGFilter":
        """Window 3 with a quadratic fit interpolates, so the kernel is ``[0, 1, 0]``."""
        return cls(3, 2)
