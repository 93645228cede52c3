"""Scanline template-matching decoder that emits per-digit logits.

The decoder plays the role of the multidigit network: it never commits to
a sequence, it only scores every value of every digit.  Each scanline is

1. cut to the symbol's outer edges and contrast-normalised,
2. fitted for blur width and guard position at both ends,
3. swept over the centre-guard position (a left/right scale sweep),
4. split into twelve cells, each compared with the L/G (left half) or R
   (right half) templates convolved with the fitted blur.

Scores are ``-beta * distance``, averaged over the accepted scanlines.  The
leading digit has no bars of its own; its row is the log posterior of the
ten parity patterns given the L/G evidence of the left half.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import logsumexp, ndtr

from .symbology import (
    CELL_OFFSETS, G_TABLE, L_TABLE, LENGTH, N_MODULES, PARITY_PATTERNS, R_TABLE,
)

LogitSource = Callable[[np.ndarray], np.ndarray]

N_VALUES = 10
UNKNOWN = 0.5

_PARITY_G = np.array([[c == "G" for c in p] for p in PARITY_PATTERNS])
_SUB = np.array([-0.25, 0.0, 0.25])
_CELL_U = (np.arange(7)[:, None] + 0.5 + _SUB[None, :]).ravel()  # 21 sample offsets
_BLUR_GRID = np.array([0.35, 0.6, 0.9, 1.2, 1.6, 2.0, 2.5, 3.0, 3.6])  # pixels
_EDGE_STEPS = np.linspace(-1.5, 1.5, 13)  # modules
_SHIFTS = np.linspace(-0.3, 0.3, 5)  # modules


def softmax_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _blur_matrix(u: np.ndarray, first: int, count: int, sigma: float) -> np.ndarray:
    """Response at module positions ``u`` to unit modules ``first..first+count-1``
    plus a trailing column for the mass that falls outside that range."""
    sigma = max(sigma, 1e-3)
    edges = np.arange(first, first + count + 1, dtype=np.float64)
    cdf = ndtr((edges[None, :] - u[:, None]) / sigma)
    inside = np.diff(cdf, axis=1)
    outside = cdf[:, :1] + (1.0 - cdf[:, -1:])
    return np.hstack([inside, outside])


def _extended(codes: np.ndarray, before: float, after: float) -> np.ndarray:
    """Cell codes padded with their fixed neighbour modules and unknowns."""
    n = codes.shape[0]
    pad_l = np.tile([UNKNOWN, UNKNOWN, before], (n, 1))
    pad_r = np.tile([after, UNKNOWN, UNKNOWN], (n, 1))
    return np.hstack([pad_l, codes, pad_r, np.full((n, 1), UNKNOWN)])


# every L/G code starts with 0 and ends with 1, every R code the reverse, so
# the modules adjacent to a cell are known whatever the neighbouring digits
_LEFT_EXT = _extended(np.concatenate([L_TABLE, G_TABLE]).astype(float), 1.0, 0.0)
_RIGHT_EXT = _extended(R_TABLE.astype(float), 0.0, 1.0)
# modules -3..6 at the start, 41..53 around the centre, 88..97 at the end
_START_BITS = np.array([0, 0, 0, 1, 0, 1, 0, UNKNOWN, UNKNOWN, UNKNOWN, UNKNOWN], float)
_CENTER_BITS = np.array([UNKNOWN] * 3 + [1, 0, 1, 0, 1, 0, 1] + [UNKNOWN] * 3 + [UNKNOWN], float)
_END_BITS = np.array([UNKNOWN] * 3 + [0, 1, 0, 1, 0, 0, 0, UNKNOWN], float)
_START_U = np.arange(-3, 4)[:, None] + 0.5 + _SUB
_END_U = np.arange(91, 98)[:, None] + 0.5 + _SUB
_CENTER_U = np.arange(44, 51)[:, None] + 0.5 + _SUB


@dataclass(frozen=True)
class _Templates:
    """Blurred predictions of the fixed and coded modules for one blur width."""

    start: np.ndarray  # (21,)
    center: np.ndarray  # (21,)
    end: np.ndarray  # (21,)
    left: np.ndarray  # (20, 21) L then G codes
    right: np.ndarray  # (10, 21) R codes


@lru_cache(maxsize=512)
def _templates(sigma_q: int) -> _Templates:
    """Templates for a blur of ``sigma_q / 50`` modules."""
    sigma = sigma_q / 50.0
    cell = _blur_matrix(_CELL_U, -3, 13, sigma).T
    return _Templates(
        start=_blur_matrix(_START_U.ravel(), -3, 10, sigma) @ _START_BITS,
        center=_blur_matrix(_CENTER_U.ravel(), 41, 13, sigma) @ _CENTER_BITS,
        end=_blur_matrix(_END_U.ravel(), 88, 10, sigma) @ _END_BITS,
        left=_LEFT_EXT @ cell,
        right=_RIGHT_EXT @ cell,
    )


def _templates_for(sigma: float) -> _Templates:
    return _templates(int(round(sigma * 50)))


def _sqdist(obs: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Mean squared distance of every row of ``obs`` (..., n) to every row of
    ``pred`` (T, n), as (..., T)."""
    n = obs.shape[-1]
    d = (obs ** 2).sum(axis=-1)[..., None] - 2.0 * obs @ pred.T + (pred ** 2).sum(axis=1)
    return np.maximum(d, 0.0) / n


@dataclass
class ScanlineRead:
    """Cell distances of one accepted scanline."""

    left: np.ndarray  # (6, 20) distances to the L then G templates
    right: np.ndarray  # (6, 10) distances to the R templates
    blur: float


def _sample(profile: np.ndarray, xs: np.ndarray) -> np.ndarray:
    centers = np.arange(profile.size) + 0.5
    return np.interp(xs, centers, profile, left=0.0, right=0.0)


def _edges(smooth: np.ndarray, thr: float):
    dark = np.nonzero(smooth > thr)[0]
    if dark.size < 20:
        return None
    i, j = dark[0], dark[-1]
    a = float(i)
    if i > 0:
        a = i - 0.5 + (thr - smooth[i - 1]) / (smooth[i] - smooth[i - 1])
    b = float(j + 1)
    if j + 1 < smooth.size:
        b = j + 0.5 + (smooth[j] - thr) / (smooth[j] - smooth[j + 1])
    return a, b


def _reading_fit(left: np.ndarray, right: np.ndarray) -> float:
    best_l = left[:, :10].min(axis=1)
    best_g = left[:, 10:].min(axis=1)
    parity_cost = np.where(_PARITY_G, best_g[None, :], best_l[None, :]).sum(axis=1).min()
    return float(parity_cost + right.min(axis=1).sum())


class _Geometry:
    """Monotone module -> pixel map, piecewise linear through anchors and
    extrapolated with the end slopes."""

    def __init__(self, modules, pixels):
        self.m = np.asarray(modules, dtype=np.float64)
        self.p = np.asarray(pixels, dtype=np.float64)

    def x(self, m):
        m = np.asarray(m, dtype=np.float64)
        out = np.interp(m, self.m, self.p)
        lo_slope = (self.p[1] - self.p[0]) / (self.m[1] - self.m[0])
        hi_slope = (self.p[-1] - self.p[-2]) / (self.m[-1] - self.m[-2])
        out = np.where(m < self.m[0], self.p[0] + (m - self.m[0]) * lo_slope, out)
        return np.where(m > self.m[-1], self.p[-1] + (m - self.m[-1]) * hi_slope, out)

    def reversed(self, n: int) -> "_Geometry":
        """The same symbol seen in a profile flipped end to end."""
        return _Geometry(N_MODULES - self.m[::-1], n - self.p[::-1])


_DENSE_M = np.linspace(0.0, N_MODULES, 191)


def _map(m, a, c, b, kl, kr):
    """Two-half bowed geometry; ``c``, ``kl``, ``kr`` may carry a leading
    hypothesis axis (shape (H, 1)) against ``m`` of shape (n,).

    Each half is linear between its guards plus a bow of ``kl`` / ``kr``
    modules at its middle, which absorbs curvature and perspective.
    """
    wl = (c - a) / 47.5
    wr = (b - c) / 47.5
    tl = m / 47.5
    tr = (m - 47.5) / 47.5
    left = a + m * wl + 4.0 * kl * wl * tl * (1.0 - tl)
    right = c + (m - 47.5) * wr + 4.0 * kr * wr * tr * (1.0 - tr)
    return np.where(m < 47.5, left, right)


# module index of the bar edges that every EAN-13 symbol shares, as
# (bar number, rising edge?, module boundary)
_BAR_ANCHORS = (
    [(0, True, 0), (1, False, 3)]
    + [(3 + 2 * j, False, 10 + 7 * j) for j in range(6)]
    + [(14, True, 46), (15, False, 49)]
    + [(16 + 2 * j, True, 50 + 7 * j) for j in range(6)]
    + [(29, False, 95)]
)


def _edge_geometry(v: np.ndarray, a: float, b: float, w0: float) -> Optional[_Geometry]:
    """Anchor the module grid on bar edges when exactly 30 bars are seen."""
    lo = max(int(a - 2 * w0), 1)
    hi = min(int(b + 2 * w0) + 1, v.size - 1)
    local = gaussian_filter1d(v, 2.5 * w0, mode="nearest")
    s = v[lo:hi] - np.maximum(local[lo:hi], 0.25)
    dark = s > 0
    flips = np.nonzero(np.diff(dark.astype(np.int8)))[0]
    rises = [i for i in flips if not dark[i]]
    falls = [i for i in flips if dark[i]]
    if dark[0] or dark[-1] or len(rises) != 30 or len(falls) != 30:
        return None

    def crossing(i):  # between samples i and i+1 of the window
        return lo + i + 0.5 + s[i] / (s[i] - s[i + 1])

    modules, pixels = [], []
    for bar, rising, module in _BAR_ANCHORS:
        modules.append(module)
        pixels.append(crossing(rises[bar] if rising else falls[bar]))
    pixels = np.asarray(pixels)
    if np.any(np.diff(pixels) <= 0):
        return None
    widths = np.diff(pixels) / np.diff(modules)
    if widths.max() > 2.5 * widths.min():
        return None
    return _Geometry(modules, pixels)


def _cell_distances(v, geo: _Geometry, offsets, preds, shifts):
    """Distance of every cell to every template, minimised over ``shifts``.

    ``v`` is the normalised profile, ``preds`` the blurred template
    predictions (T, 21).  Returns (cells, T) distances.
    """
    u = np.asarray(offsets)[:, None, None] + shifts[None, :, None] + _CELL_U[None, None, :]
    obs = _sample(v, geo.x(u))  # (cells, shifts, 21)
    d = _sqdist(obs, preds)  # (cells, S, T)
    return d.min(axis=1)


def _half_cells(u_offsets):
    return (np.asarray(u_offsets)[:, None] + _CELL_U[None, :]).ravel()


_UL = _half_cells(CELL_OFFSETS[:6])
_UR = _half_cells(CELL_OFFSETS[6:])
_UC = _CENTER_U.ravel()
_MID = slice(1, None, 3)  # centre subsample only, for the coarse pass


def _swept_geometry(v, a, b, left_pred, right_pred, center_pred) -> _Geometry:
    """Grid search over the centre-guard position and the bow of each half.

    For a given centre the two halves are independent, so the joint
    optimum is ``min_c [centre(c) + min_kl left(c, kl) + min_kr right(c, kr)]``.
    The guard bars repeat with period two, which is why every hypothesis is
    scored on the cells as well as on the guard.
    """
    w = (b - a) / N_MODULES

    def search(cs, left_bows, right_bows, sub):
        c = cs[:, None, None]
        nsub = len(range(21)[sub])

        def half(u, kl, kr, pred, nbows):
            u = u.reshape(6, 21)[:, sub].ravel()
            obs = _sample(v, _map(u, a, c, b, kl, kr)).reshape(cs.size, nbows, 6, nsub)
            return _sqdist(obs, pred[:, sub]).min(axis=3).sum(axis=2)

        left = half(_UL, left_bows[None, :, None], 0.0, left_pred, left_bows.size)
        right = half(_UR, 0.0, right_bows[None, :, None], right_pred, right_bows.size)
        cen = ((_sample(v, _map(_UC, a, cs[:, None], b, 0.0, 0.0)) - center_pred) ** 2).mean(axis=1)
        i = int(np.argmin(cen + left.min(axis=1) + right.min(axis=1)))
        return float(cs[i]), float(left_bows[left[i].argmin()]), float(right_bows[right[i].argmin()])

    coarse = np.linspace(-6.0, 6.0, 13)
    c, kl, kr = search(a + (b - a) * np.linspace(0.4, 0.6, 33), coarse, coarse, _MID)
    fine = np.linspace(-0.75, 0.75, 7)
    c, kl, kr = search(c + np.linspace(-1.0, 1.0, 9) * w, kl + fine, kr + fine, slice(None))
    return _Geometry(_DENSE_M, _map(_DENSE_M, a, c, b, kl, kr))


@dataclass
class SoftDecoder:
    """Callable image -> (13, 10) logit matrix."""

    beta: float = 40.0
    scanlines: int = 9
    band: float = 0.6
    min_anchor: float = 0.6
    min_contrast: float = 0.08
    threshold: float = 0.3
    # fewer accepted scanlines than this and the image yields no evidence;
    # a lone lucky scanline is the usual source of confident misreads
    min_reads: int = 4

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return self.decode(img)

    def scanline_rows(self, height: int) -> np.ndarray:
        lo = (1.0 - self.band) / 2.0 * (height - 1)
        hi = (1.0 + self.band) / 2.0 * (height - 1)
        return np.rint(np.linspace(lo, hi, self.scanlines)).astype(int)

    def read_scanline(self, row: np.ndarray) -> Optional[ScanlineRead]:
        profile = 1.0 - np.asarray(row, dtype=np.float64) / 255.0
        smooth = gaussian_filter1d(profile, 1.0)
        lo, hi = np.percentile(smooth, [2, 98])
        if hi - lo < self.min_contrast:
            return None
        edges = _edges(smooth, lo + self.threshold * (hi - lo))
        if edges is None:
            return None
        a, b = edges
        if b - a < N_MODULES * 1.2:
            return None
        v = (profile - lo) / (hi - lo)
        w0 = (b - a) / N_MODULES

        # blur width and outer guard positions, fitted on the fixed modules
        start_err = np.empty((_BLUR_GRID.size, _EDGE_STEPS.size))
        end_err = np.empty_like(start_err)
        xs = a + (_START_U.ravel()[None, :] + _EDGE_STEPS[:, None]) * w0
        xe = b + (_END_U.ravel()[None, :] - N_MODULES + _EDGE_STEPS[:, None]) * w0
        seen_s, seen_e = _sample(v, xs), _sample(v, xe)
        for i, s in enumerate(_BLUR_GRID / w0):
            t = _templates_for(s)
            start_err[i] = ((seen_s - t.start) ** 2).mean(axis=1)
            end_err[i] = ((seen_e - t.end) ** 2).mean(axis=1)
        bi = int(np.argmin(start_err.min(axis=1) + end_err.min(axis=1)))
        sigma = _BLUR_GRID[bi] / w0
        a = a + _EDGE_STEPS[start_err[bi].argmin()] * w0
        b = b + _EDGE_STEPS[end_err[bi].argmin()] * w0
        tpl = _templates_for(sigma)

        geo = _edge_geometry(v, a, b, w0)
        if geo is None:
            geo = _swept_geometry(v, a, b, tpl.left, tpl.right, tpl.center)

        anchors = np.concatenate([_START_U.ravel(), _CENTER_U.ravel(), _END_U.ravel()])
        expected = np.concatenate([tpl.start, tpl.center, tpl.end])
        seen = _sample(v, geo.x(anchors))
        corr = np.corrcoef(seen, expected)[0, 1] if seen.std() > 0 else -1.0
        if not corr >= self.min_anchor:
            return None

        left, right = self._cells(v, geo, tpl.left, tpl.right)
        # the same scanline read right-to-left; an upside-down symbol fits better that way
        n = v.size
        rgeo = geo.reversed(n)
        rleft, rright = self._cells(v[::-1], rgeo, tpl.left, tpl.right)
        if _reading_fit(rleft, rright) < _reading_fit(left, right):
            return None
        return ScanlineRead(left, right, sigma * w0)

    @staticmethod
    def _cells(v, geo, left_pred, right_pred):
        left = _cell_distances(v, geo, CELL_OFFSETS[:6], left_pred, _SHIFTS)
        right = _cell_distances(v, geo, CELL_OFFSETS[6:], right_pred, _SHIFTS)
        return left, right

    def read(self, img: np.ndarray) -> list:
        img = np.asarray(img)
        reads = []
        for r in self.scanline_rows(img.shape[0]):
            got = self.read_scanline(img[r])
            if got is not None:
                reads.append(got)
        return reads

    def decode(self, img: np.ndarray) -> np.ndarray:
        reads = self.read(img)
        if len(reads) < min(self.min_reads, self.scanlines):
            reads = []
        return logits_from_reads(reads, self.beta)


def logits_from_reads(reads: Sequence[ScanlineRead], beta: float) -> np.ndarray:
    """Average scanline evidence into a 13x10 logit matrix (zeros if none)."""
    logits = np.zeros((LENGTH, N_VALUES))
    if not reads:
        return logits
    left = np.zeros((6, 20))
    right = np.zeros((6, 10))
    for r in reads:  # fixed order keeps the sum bit-stable
        left += r.left
        right += r.right
    left = -beta * left / len(reads)
    right = -beta * right / len(reads)

    lg = left.reshape(6, 2, 10)  # [cell, L/G, digit]
    logits[1:7] = np.logaddexp(lg[:, 0], lg[:, 1])
    logits[7:] = right
    parity = logsumexp(lg, axis=2)  # (6, 2)
    parity -= np.logaddexp(parity[:, :1], parity[:, 1:])
    logits[0] = np.where(_PARITY_G, parity[None, :, 1], parity[None, :, 0]).sum(axis=1)
    return logits


def decode_soft(img: np.ndarray, beta: float = 40.0, scanlines: int = 9) -> np.ndarray:
    return SoftDecoder(beta=beta, scanlines=scanlines).decode(img)


def calibrate_beta(reads_and_truths, grid: Sequence[float] = tuple(np.geomspace(2, 200, 41))) -> float:
    """Pick the sharpness minimising the mean negative log-likelihood of the
    true digits over a calibration corpus of ``(reads, truth)`` pairs."""
    best, best_nll = None, np.inf
    for beta in grid:
        nll = 0.0
        for reads, truth in reads_and_truths:
            lm = logits_from_reads(reads, beta)
            logp = lm - logsumexp(lm, axis=1, keepdims=True)
            nll -= logp[np.arange(LENGTH), list(truth)].sum()
        if nll < best_nll:
            best, best_nll = float(beta), nll
    return best
