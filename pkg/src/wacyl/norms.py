"""Hölder norms |.|_{C^sigma} and the time-weighted norms |.|_{sigma,l}.

The weighted norm of a time-dependent function is the sup over the time
grid of the spatial Hölder norm multiplied by t^l.  Hölder quotients for
fractional sigma are taken over grid-point pairs; by default all
axis-aligned separations plus short diagonal offsets are scanned.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grids import GridFn

__all__ = ["NormReport", "holder_norm", "weighted_norm", "product",
           "compose_torus", "convexity_check", "norm_algebra_check"]


@dataclass
class NormReport:
    sigma: float
    l: float
    value: float
    per_time_profile: list


def _axis_distance(grid, axis, offset):
    if axis < grid.n:
        dx = 1.0 / grid.torus_points
        d = offset * dx
        return min(d, 1.0 - d)
    dw = grid.window_axes[0][1] - grid.window_axes[0][0]
    return offset * dw


def _shifted_diff(grid, arr, axis, offset):
    """|arr(x + offset e_axis) - arr(x)| with periodic wrap on torus axes
    and truncation on window axes.  arr has spatial axes first."""
    if axis < grid.n:
        return np.abs(np.roll(arr, -offset, axis=axis) - arr)
    sl_hi = [slice(None)] * arr.ndim
    sl_lo = [slice(None)] * arr.ndim
    sl_hi[axis] = slice(offset, None)
    sl_lo[axis] = slice(None, -offset)
    return np.abs(arr[tuple(sl_hi)] - arr[tuple(sl_lo)])


def _holder_quotient(grid, top_derivs, mu, pair_radius):
    """Max over sampled grid-point pairs of |D(x)-D(y)| / dist^mu."""
    best = 0.0
    dims = grid.n + grid.m
    for axis in range(dims):
        npts = grid.torus_points if axis < grid.n else grid.window_points
        max_off = npts // 2
        if pair_radius is not None:
            max_off = min(max_off, pair_radius)
        for off in range(1, max_off + 1):
            dist = _axis_distance(grid, axis, off)
            if dist <= 0:
                continue
            for arr in top_derivs:
                diff = _shifted_diff(grid, arr, axis, off).max()
                best = max(best, diff / dist ** mu)
    # short diagonal offsets between axis pairs
    diag_reach = 8 if pair_radius is None else min(8, pair_radius)
    for a1, a2 in itertools.combinations(range(dims), 2):
        for o1 in range(1, diag_reach + 1):
            for o2 in range(1, diag_reach + 1):
                d = np.hypot(_axis_distance(grid, a1, o1),
                             _axis_distance(grid, a2, o2))
                for arr in top_derivs:
                    step = _shifted_diff(grid, arr, a1, o1)
                    diff = _shifted_diff(grid, step, a2, o2).max()
                    best = max(best, diff / d ** mu)
    return best


def _slice_fn(f, idx):
    """One time slice of f wrapped as a single-time GridFn-like array."""
    return f.values[idx]


def holder_norm(f, sigma, time_index=0, pair_radius=None):
    """Hölder norm |f^t|_{C^sigma} of one time slice of a GridFn.

    Derivatives are spectral on torus axes and centered finite
    differences on window axes; the fractional part adds the maximal
    discrete Hölder quotient of the order-floor(sigma) derivatives.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if not np.all(np.isfinite(f.values)):
        raise ValueError("non-finite values")
    k = int(np.floor(sigma))
    mu = sigma - k
    if abs(mu) < 1e-12:
        mu = 0.0
    dims = f.grid.dim
    level = {(0,) * dims: f}
    best = float(np.abs(_slice_fn(f, time_index)).max())
    tops = [_slice_fn(f, time_index)] if k == 0 else []
    for order in range(1, k + 1):
        new_level = {}
        for alpha, g in level.items():
            for axis in range(dims):
                beta = list(alpha)
                beta[axis] += 1
                beta = tuple(beta)
                if beta in new_level:
                    continue
                new_level[beta] = g.dq(axis)
        level = new_level
        for g in level.values():
            arr = _slice_fn(g, time_index)
            best = max(best, float(np.abs(arr).max()))
            if order == k:
                tops.append(arr)
    if mu > 0:
        best = max(best, _holder_quotient(f.grid, tops, mu, pair_radius))
    return best


def weighted_norm(f, sigma, l, pair_radius=None):
    """|f|_{sigma,l} = max over the time grid of |f^t|_{C^sigma} t^l."""
    if sigma < 0 or l < 0:
        raise ValueError("sigma and l must be nonnegative")
    if len(f.times) == 0:
        raise ValueError("empty time grid")
    key = (round(float(sigma), 12), round(float(l), 12), pair_radius)
    cached = f._norm_cache.get(key)
    if cached is not None:
        return cached
    # share the spatial Hölder norms across l values
    hkey = ("holder", round(float(sigma), 12), pair_radius)
    hvals = f._norm_cache.get(hkey)
    if hvals is None:
        hvals = [holder_norm(f, sigma, i, pair_radius)
                 for i in range(len(f.times))]
        f._norm_cache[hkey] = hvals
    profile = [(float(t), h * float(t) ** l)
               for t, h in zip(f.times.points, hvals)]
    report = NormReport(sigma=float(sigma), l=float(l),
                        value=max(p for _, p in profile),
                        per_time_profile=profile)
    f._norm_cache[key] = report
    return report


def product(f, g):
    """Pointwise product; scalar (1-component) factors broadcast."""
    if f.grid != g.grid or not (f.times == g.times):
        raise ValueError("grid mismatch")
    if f.components == g.components or g.components == 1:
        return GridFn(f.grid, f.times, f.values * g.values)
    if f.components == 1:
        return GridFn(f.grid, f.times, g.values * f.values)
    raise ValueError("incompatible component counts")


def compose_torus(f, u):
    """f composed with the torus self-map z(q) = q + u(q), per time slice.

    Torus-only grids; evaluation through the trigonometric interpolant.
    """
    if f.grid.m:
        raise ValueError("composition supported on torus-only grids")
    interp = f.interpolator()
    mesh = np.stack(f.grid.meshgrid(), axis=-1)
    out = np.empty_like(f.values)
    for i, t in enumerate(f.times.points):
        pts = mesh + u.values[i]
        out[i] = interp(pts.reshape(-1, f.grid.n), t).reshape(
            f.grid.shape + (f.components,))
    return GridFn(f.grid, f.times, out)


def convexity_check(f, lambda1, lambda2, alpha, l=0.0, pair_radius=None):
    """Ratio |f|_lam / (|f|_{lam1}^{1-alpha} |f|_{lam2}^alpha) with
    lam = (1-alpha) lam1 + alpha lam2, for boundedness testing."""
    if not (0 <= lambda1 <= lambda2):
        raise ValueError("need 0 <= lambda1 <= lambda2")
    if not (0 <= alpha <= 1):
        raise ValueError("alpha must lie in [0,1]")
    lam = (1 - alpha) * lambda1 + alpha * lambda2
    n_mid = weighted_norm(f, lam, l, pair_radius).value
    n_lo = weighted_norm(f, lambda1, l, pair_radius).value
    n_hi = weighted_norm(f, lambda2, l, pair_radius).value
    denom = n_lo ** (1 - alpha) * n_hi ** alpha
    ratio = n_mid / denom if denom > 0 else (0.0 if n_mid == 0 else np.inf)
    return {"lambda": lam, "norm_mid": n_mid, "norm_lo": n_lo,
            "norm_hi": n_hi, "ratio": ratio}


def norm_algebra_check(f, g, sigma, l, m, u=None, pair_radius=None):
    """Quantitative checks of the weighted-norm calculus.

    (a) derivative restriction and (b) l-monotonicity are exact grid
    facts and return pass/fail; the product ratio (c) and, when a
    displacement u is supplied, the composition ratio (d) are returned
    for comparison against documented constants.
    """
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    report = {}
    # (a) weighted_norm(df, sigma-1, l) <= weighted_norm(f, sigma, l)
    if sigma >= 1:
        lhs = max(weighted_norm(f.dq(a), sigma - 1, l, pair_radius).value
                  for a in range(f.grid.dim))
        rhs = weighted_norm(f, sigma, l, pair_radius).value
        report["derivative_restriction"] = {
            "lhs": lhs, "rhs": rhs, "pass": lhs <= rhs * (1 + 1e-12)}
    # (b) |f|_{sigma,l} <= |f|_{sigma,l+m}
    lo = weighted_norm(f, sigma, l, pair_radius).value
    hi = weighted_norm(f, sigma, l + m, pair_radius).value
    report["l_monotonicity"] = {"lhs": lo, "rhs": hi,
                                "pass": lo <= hi * (1 + 1e-12)}
    # (c) product ratio
    fg = product(f, g)
    num = weighted_norm(fg, sigma, l + m, pair_radius).value
    den = (weighted_norm(f, 0, l, pair_radius).value
           * weighted_norm(g, sigma, m, pair_radius).value
           + weighted_norm(f, sigma, l, pair_radius).value
           * weighted_norm(g, 0, m, pair_radius).value)
    report["product_ratio"] = num / den if den > 0 else 0.0
    # (d) composition ratio, torus self-map z = id + u
    if u is not None:
        fz = compose_torus(f, u)
        jac = u.jacobian_q()
        eye = np.eye(u.grid.dim)
        nz = GridFn(u.grid, u.times,
                    (jac + eye).reshape(jac.shape[:-2] + (-1,)))
        num = weighted_norm(fz, sigma, l + m, pair_radius).value
        den = (weighted_norm(f, sigma, l, pair_radius).value
               * weighted_norm(nz, 0, m, pair_radius).value ** sigma
               + weighted_norm(f, 1, l, pair_radius).value
               * weighted_norm(nz, max(sigma - 1, 0), m, pair_radius).value
               + weighted_norm(f, 0, l + m, pair_radius).value)
        report["composition_ratio"] = num / den if den > 0 else 0.0
    return report
