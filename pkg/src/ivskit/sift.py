"""Scale-invariant keypoints and 128-element gradient-histogram descriptors.

The pipeline follows the classic construction: a Gaussian pyramid with
``scales_per_octave + 3`` levels per octave, difference-of-Gaussian (DoG)
extrema in a 3x3x3 neighbourhood, quadratic sub-pixel refinement with
contrast and edge rejection, a 36-bin orientation histogram, and a
4x4x8 descriptor that is L2-normalized, clamped at 0.2 and re-normalized.

Output order is canonical ``(octave, level, y, x, orientation)`` so that
results never depend on how work was scheduled.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter, zoom

from .imgcore import GrayImage, to_grayscale_u8

logger = logging.getLogger(__name__)

ASSUMED_INPUT_BLUR = 0.5
MIN_OCTAVE_SIZE = 16
REFINE_ITERATIONS = 5
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE_FACTOR = 3.0
DESC_CLAMP = 0.2


@dataclass(frozen=True)
class SiftParams:
    n_octaves: int | None = None
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio_threshold: float = 10.0
    max_keypoints: int | None = None
    upsample: bool = False
    border: int = 5

    def __post_init__(self):
        if self.scales_per_octave < 2:
            raise ValueError("scales_per_octave must be >= 2")
        if self.base_sigma <= 0 or self.contrast_threshold <= 0 or self.edge_ratio_threshold <= 0:
            raise ValueError("sigma and thresholds must be > 0")
        if self.n_octaves is not None and self.n_octaves < 1:
            raise ValueError("n_octaves must be >= 1 or None for auto")
        if self.max_keypoints is not None and self.max_keypoints < 0:
            raise ValueError("max_keypoints must be non-negative")


@dataclass(frozen=True, eq=False)
class KeypointDescriptor:
    """A located, oriented keypoint in full-image pixel coordinates.

    ``descriptor`` is None until :func:`compute_descriptors` has run.
    The octave-local fields locate the keypoint inside its pyramid.
    """

    x: float
    y: float
    scale: float
    orientation: float = 0.0
    descriptor: np.ndarray | None = None
    response: float = 0.0
    octave: int = 0
    level: int = 0
    row: int = 0
    col: int = 0
    sub_level: float = 0.0


@dataclass
class ScaleSpace:
    """Gaussian and DoG pyramids. ``gaussians[o]`` has shape (S+3, h, w)."""

    gaussians: list = field(default_factory=list)
    dogs: list = field(default_factory=list)
    params: SiftParams = field(default_factory=SiftParams)
    unit: float = 1.0  # full-image pixels per octave-0 pixel
    image_shape: tuple = (0, 0)

    @property
    def n_octaves(self) -> int:
        return len(self.gaussians)


def auto_octaves(min_side: int) -> int:
    return int(math.floor(math.log2(min_side / MIN_OCTAVE_SIZE))) + 1


def _level_sigmas(p: SiftParams) -> np.ndarray:
    k = 2.0 ** (1.0 / p.scales_per_octave)
    return p.base_sigma * k ** np.arange(p.scales_per_octave + 3)


def _halve(a: np.ndarray) -> np.ndarray:
    # 2x2 block mean: samples at pixel-pair centres, so the grid maps onto
    # itself under flips and 90 degree rotations (plain [::2] decimation does not).
    h, w = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
    a = a[:h, :w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def build_scale_space(img: GrayImage, p: SiftParams | None = None) -> ScaleSpace:
    """Build the Gaussian and difference-of-Gaussian pyramids for ``img``."""
    p = p or SiftParams()
    if min(img.shape) < MIN_OCTAVE_SIZE:
        raise ValueError(
            f"image {img.shape} too small for one octave (min side {MIN_OCTAVE_SIZE})"
        )
    base = to_grayscale_u8(img).astype(np.float64) / 255.0
    # Blurring is linear, so filter an offset copy: a constant image then
    # produces exactly-zero DoG levels.
    offset = float(np.median(base))
    base = base - offset
    blur_in = ASSUMED_INPUT_BLUR
    unit = 1.0
    if p.upsample:
        base = zoom(base, 2, order=1, mode="nearest", grid_mode=True)
        blur_in *= 2
        unit = 0.5
    n_oct = p.n_octaves or auto_octaves(min(base.shape))
    n_oct = min(n_oct, auto_octaves(min(base.shape)))

    sig = _level_sigmas(p)
    incr = [math.sqrt(max(sig[0] ** 2 - blur_in**2, 0.01))]
    incr += [math.sqrt(sig[i] ** 2 - sig[i - 1] ** 2) for i in range(1, len(sig))]

    gaussians, dogs = [], []
    current = base
    for o in range(n_oct):
        if o > 0:
            current = _halve(gaussians[-1][p.scales_per_octave])
            levels = [current]
        else:
            levels = [gaussian_filter(current, incr[0], mode="mirror")]
        for i in range(1, len(sig)):
            levels.append(gaussian_filter(levels[-1], incr[i], mode="mirror"))
        stack = np.stack(levels)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
    for o in range(n_oct):
        gaussians[o] = gaussians[o] + offset
    return ScaleSpace(gaussians=gaussians, dogs=dogs, params=p, unit=unit,
                      image_shape=img.shape)


def _derivatives(D: np.ndarray, s: int, r: int, c: int):
    g = 0.5 * np.array([
        D[s, r, c + 1] - D[s, r, c - 1],
        D[s, r + 1, c] - D[s, r - 1, c],
        D[s + 1, r, c] - D[s - 1, r, c],
    ])
    v2 = 2.0 * D[s, r, c]
    dxx = D[s, r, c + 1] + D[s, r, c - 1] - v2
    dyy = D[s, r + 1, c] + D[s, r - 1, c] - v2
    dss = D[s + 1, r, c] + D[s - 1, r, c] - v2
    dxy = 0.25 * (D[s, r + 1, c + 1] - D[s, r + 1, c - 1] - D[s, r - 1, c + 1] + D[s, r - 1, c - 1])
    dxs = 0.25 * (D[s + 1, r, c + 1] - D[s + 1, r, c - 1] - D[s - 1, r, c + 1] + D[s - 1, r, c - 1])
    dys = 0.25 * (D[s + 1, r + 1, c] - D[s + 1, r - 1, c] - D[s - 1, r + 1, c] + D[s - 1, r - 1, c])
    H = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return g, H


def _refine(D, s, r, c, p: SiftParams):
    """Quadratic refinement; returns (s, r, c, offset, value) or None."""
    n_lev = p.scales_per_octave
    h, w = D.shape[1:]
    b = p.border
    for _ in range(REFINE_ITERATIONS):
        g, H = _derivatives(D, s, r, c)
        try:
            off = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(off)):
            return None
        if np.all(np.abs(off) < 0.5):
            value = D[s, r, c] + 0.5 * float(g @ off)
            return s, r, c, off, value
        c += int(round(off[0]))
        r += int(round(off[1]))
        s += int(round(off[2]))
        if s < 1 or s > n_lev or r < b or r >= h - b or c < b or c >= w - b:
            return None
    return None


def _passes_edge(D, s, r, c, ratio: float) -> bool:
    v2 = 2.0 * D[s, r, c]
    dxx = D[s, r, c + 1] + D[s, r, c - 1] - v2
    dyy = D[s, r + 1, c] + D[s, r - 1, c] - v2
    dxy = 0.25 * (D[s, r + 1, c + 1] - D[s, r + 1, c - 1] - D[s, r - 1, c + 1] + D[s, r - 1, c - 1])
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    return det > 0 and tr * tr * ratio < (ratio + 1.0) ** 2 * det


def detect_keypoints(space: ScaleSpace, p: SiftParams | None = None) -> list[KeypointDescriptor]:
    """Locate refined DoG extrema; orientation and descriptor are left unset."""
    p = p or space.params
    S = p.scales_per_octave
    H_img, W_img = space.image_shape
    prefilter = 0.5 * p.contrast_threshold
    found = []
    for o, D in enumerate(space.dogs):
        h, w = D.shape[1:]
        b = p.border
        if h <= 2 * b or w <= 2 * b:
            continue
        mx = maximum_filter(D, size=3, mode="nearest")
        mn = minimum_filter(D, size=3, mode="nearest")
        cand = ((D == mx) & (D > prefilter)) | ((D == mn) & (D < -prefilter))
        cand[0] = cand[-1] = False
        cand[:, :b] = cand[:, h - b:] = False
        cand[:, :, :b] = cand[:, :, w - b:] = False
        seen = set()
        for s, r, c in zip(*np.nonzero(cand)):
            res = _refine(D, int(s), int(r), int(c), p)
            if res is None:
                continue
            s2, r2, c2, off, value = res
            if (s2, r2, c2) in seen:
                continue
            if abs(value) < p.contrast_threshold:
                continue
            if not _passes_edge(D, s2, r2, c2, p.edge_ratio_threshold):
                continue
            seen.add((s2, r2, c2))
            factor = (2.0 ** o) * space.unit
            # pixel centres of coarser grids sit between finer-grid pixels
            x = (c2 + off[0] + 0.5) * factor - 0.5
            y = (r2 + off[1] + 0.5) * factor - 0.5
            if not (0.0 <= x < W_img and 0.0 <= y < H_img):
                continue
            sub = s2 + off[2]
            sigma = p.base_sigma * 2.0 ** (sub / S) * factor
            found.append(KeypointDescriptor(
                x=float(x), y=float(y), scale=float(sigma), response=float(value),
                octave=o, level=s2, row=r2, col=c2, sub_level=float(sub),
            ))
    found.sort(key=lambda k: (k.octave, k.level, k.y, k.x))
    if p.max_keypoints is not None and len(found) > p.max_keypoints:
        ranked = sorted(found, key=lambda k: (-abs(k.response), k.y, k.x, k.scale))
        keep = {id(k) for k in ranked[: p.max_keypoints]}
        found = [k for k in found if id(k) in keep]
    return found


class _GradientCache:
    def __init__(self, space: ScaleSpace):
        self.space = space
        self._maps = {}

    def get(self, o: int, lev: int):
        key = (o, lev)
        if key not in self._maps:
            L = self.space.gaussians[o][lev]
            dx = np.zeros_like(L)
            dy = np.zeros_like(L)
            dx[:, 1:-1] = L[:, 2:] - L[:, :-2]
            dy[1:-1, :] = L[2:, :] - L[:-2, :]
            mag = np.hypot(dx, dy)
            ang = np.mod(np.arctan2(dy, dx), 2 * np.pi)
            self._maps[key] = (mag, ang)
        return self._maps[key]


def _octave_sigma(kp: KeypointDescriptor, p: SiftParams) -> float:
    return p.base_sigma * 2.0 ** (kp.sub_level / p.scales_per_octave)


def _orientations(kp, mag, ang, sigma) -> list[float]:
    h, w = mag.shape
    radius = int(round(ORI_RADIUS_FACTOR * ORI_SIGMA_FACTOR * sigma))
    r0, r1 = max(kp.row - radius, 1), min(kp.row + radius, h - 2)
    c0, c1 = max(kp.col - radius, 1), min(kp.col + radius, w - 2)
    if r1 < r0 or c1 < c0:
        return []
    ii, jj = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    di, dj = ii - kp.row, jj - kp.col
    wsig = ORI_SIGMA_FACTOR * sigma
    weight = np.exp(-(di * di + dj * dj) / (2.0 * wsig * wsig))
    m = mag[r0 : r1 + 1, c0 : c1 + 1] * weight
    a = ang[r0 : r1 + 1, c0 : c1 + 1]
    bins = np.rint(a * ORI_BINS / (2 * np.pi)).astype(np.int64) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=m.ravel(), minlength=ORI_BINS)
    smooth = (
        6 * hist
        + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
        + (np.roll(hist, 2) + np.roll(hist, -2))
    ) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    out = []
    left, right = np.roll(smooth, 1), np.roll(smooth, -1)
    for j in range(ORI_BINS):
        cval = smooth[j]
        if cval > left[j] and cval > right[j] and cval >= ORI_PEAK_RATIO * peak:
            denom = left[j] - 2 * cval + right[j]
            shift = 0.5 * (left[j] - right[j]) / denom if denom != 0 else 0.0
            theta = ((j + shift) * 2 * np.pi / ORI_BINS) % (2 * np.pi)
            out.append(float(theta))
    return sorted(out)


def _descriptor(kp, theta, mag, ang, sigma):
    """4x4x8 descriptor; None when the window leaves the image."""
    h, w = mag.shape
    d, n = DESC_WIDTH, DESC_BINS
    hist_width = DESC_SCALE_FACTOR * sigma
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    if kp.row - radius < 1 or kp.row + radius > h - 2 or kp.col - radius < 1 or kp.col + radius > w - 2:
        return None
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    di, dj = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    u = (cos_t * dj + sin_t * di) / hist_width
    v = (-sin_t * dj + cos_t * di) / hist_width
    rbin = v + d / 2 - 0.5
    cbin = u + d / 2 - 0.5
    inside = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    rr = kp.row + di[inside]
    cc = kp.col + dj[inside]
    rbin, cbin = rbin[inside], cbin[inside]
    weight = np.exp(-(u[inside] ** 2 + v[inside] ** 2) / (2.0 * (0.5 * d) ** 2))
    m = mag[rr, cc] * weight
    obin = np.mod(ang[rr, cc] - theta, 2 * np.pi) * n / (2 * np.pi)

    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2) * (d + 2) * n)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                idx = ((r0 + 1 + dr) * (d + 2) + (c0 + 1 + dc)) * n + (o0 + do) % n
                hist += np.bincount(idx, weights=m * wr * wc * wo, minlength=hist.size)
    vec = hist.reshape(d + 2, d + 2, n)[1:-1, 1:-1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, DESC_CLAMP)
    vec = vec / np.linalg.norm(vec)
    return vec


def compute_descriptors(source, keypoints, p: SiftParams | None = None) -> list[KeypointDescriptor]:
    """Assign orientations and descriptors.

    ``source`` is either the :class:`ScaleSpace` the keypoints came from or
    the original image (the pyramid is then rebuilt). A keypoint may yield
    several oriented copies; keypoints whose window leaves the image are
    dropped.
    """
    if isinstance(source, GrayImage):
        space = build_scale_space(source, p)
    else:
        space = source
    p = p or space.params
    grads = _GradientCache(space)
    out = []
    for kp in keypoints:
        sigma = _octave_sigma(kp, p)
        lev = int(min(max(round(kp.sub_level), 0), p.scales_per_octave + 2))
        mag, ang = grads.get(kp.octave, lev)
        for theta in _orientations(kp, mag, ang, sigma):
            vec = _descriptor(kp, theta, mag, ang, sigma)
            if vec is None:
                continue
            out.append(replace(kp, orientation=theta, descriptor=vec))
    out.sort(key=lambda k: (k.octave, k.level, k.y, k.x, k.orientation))
    return out


def extract_features(img: GrayImage, p: SiftParams | None = None) -> list[KeypointDescriptor]:
    """Scale space, detection and description in one call."""
    p = p or SiftParams()
    space = build_scale_space(img, p)
    return compute_descriptors(space, detect_keypoints(space, p), p)


def descriptor_matrix(keypoints) -> np.ndarray:
    if not keypoints:
        return np.zeros((0, DESC_WIDTH * DESC_WIDTH * DESC_BINS))
    return np.stack([k.descriptor for k in keypoints])


def write_keypoints_csv(keypoints, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "scale", "orientation"])
        for k in keypoints:
            wr.writerow([f"{k.x:.6f}", f"{k.y:.6f}", f"{k.scale:.6f}", f"{k.orientation:.6f}"])
