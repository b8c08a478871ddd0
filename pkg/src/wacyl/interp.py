"""Evaluation of GridFn data off the grid.

Torus axes use the trigonometric interpolant of the sampled Fourier
coefficients (exact for band-limited data); window axes use cubic
local polynomials; time uses degree-6 local Lagrange interpolation on
the log-uniform grid.
"""

from __future__ import annotations

import numpy as np

__all__ = ["GridFnInterpolant"]


def _lagrange_weights(xs, x):
    """Barycentric evaluation weights for nodes xs at point x."""
    w = np.ones(len(xs))
    for i in range(len(xs)):
        for j in range(len(xs)):
            if i != j:
                w[i] *= (x - xs[j]) / (xs[i] - xs[j])
    return w


class GridFnInterpolant:
    """Callable (q, t) -> components for a GridFn.

    q has shape (..., dim); broadcasting over leading axes is supported.
    Spatial evaluation happens in Fourier space per torus axis, so the
    cost per call scales with torus_points * n.
    """

    def __init__(self, f, time_degree=6):
        self.f = f
        self.grid = f.grid
        self.times = f.times
        self.time_degree = min(time_degree, len(f.times) - 1)
        if self.grid.m:
            raise NotImplementedError(
                "off-grid evaluation with window axes is not needed by the "
                "solver; sample on-grid instead")
        # Fourier coefficients per time slice: shape (T, *modes, comp)
        axes = tuple(range(1, 1 + self.grid.n))
        self.coeff = np.fft.fftn(f.values, axes=axes) / (
            self.grid.torus_points ** self.grid.n)
        self.freqs = [self.grid.freq(a) for a in range(self.grid.n)]

    def _time_weights(self, t):
        lt = np.log(t)
        logs = self.times.log_points
        width = self.time_degree + 1
        i = int(np.searchsorted(logs, lt))
        lo = min(max(i - width // 2, 0), len(logs) - width)
        return lo, _lagrange_weights(logs[lo:lo + width], lt)

    def _coeff_at(self, t):
        lo, w = self._time_weights(t)
        return np.tensordot(w, self.coeff[lo:lo + len(w)], axes=(0, 0))

    def __call__(self, q, t, derivative=None):
        """Evaluate at points q (shape (..., n)) and scalar time t.

        derivative: None for values, or an axis index for d/dq_axis.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        c = self._coeff_at(t)  # (*modes, comp)
        # accumulate exp(2 pi i k.q) sums axis by axis
        phases = 1.0
        for a in range(self.grid.n):
            k = self.freqs[a]
            ph = np.exp(2j * np.pi * np.outer(q[..., a].ravel(), k))
            if derivative == a:
                ph = ph * (2j * np.pi * k)
            c = np.tensordot(ph, c, axes=(1, 0)) if a == 0 else \
                np.einsum("pk,pk...->p...", ph, c)
        out = c.real
        return out.reshape(q.shape[:-1] + (self.f.components,))

    def jacobian(self, q, t):
        """Spatial Jacobian d(components)/d(q) at points q, time t."""
        parts = [self(q, t, derivative=a) for a in range(self.grid.n)]
        return np.stack(parts, axis=-1)
