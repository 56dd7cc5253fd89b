"""Monte Carlo ray tracing from a point source at the origin.

Rays leave O in directions x drawn from a source density g(x) on S^n, hit the
reflector at rho(x) x and leave along gamma(x). The far-field histogram of
reflected directions is compared with the pushforward density
g(x) / |S_n(x)| evaluated at preimages x = gamma^{-1}(y).

Randomness comes from NumPy's Philox counter-based generator, keyed by the
seed and the chunk index, so a batch depends only on (seed, count, shape).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kummer_core import (
    RadialHypersurface,
    ehat_form,
    intensity_form,
    principal_intensities,
    reflection_differential,
    reflection_map,
)
from .sphere_geometry import ChartPoints

CHUNK = 1 << 16


class RayTraceError(ValueError):
    pass


def chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    """Philox stream for one chunk of rays, keyed by (seed, chunk)."""
    key = (int(seed) % (1 << 64)) | (int(chunk) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_directions(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    v = rng.standard_normal((count, n + 1))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class RayBatch:
    seed: int
    count: int
    source: np.ndarray  # (count, n+1)
    hit: np.ndarray  # (count, n+1), rho(x) x
    reflected: np.ndarray  # (count, n+1)

    @property
    def n(self) -> int:
        return self.source.shape[1] - 1


def _domain_ok(func, x: np.ndarray) -> np.ndarray:
    mask_fn = getattr(func, "domain_mask", None)
    if mask_fn is None:
        return np.ones(len(x), dtype=bool)
    return mask_fn(ChartPoints.from_ambient(x))


def _sample_chunk(func, n, density, bound, rng, want):
    out = []
    got = 0
    for _ in range(10_000):
        x = uniform_directions(rng, max(want, 64), n)
        keep = _domain_ok(func, x)
        if density is not None:
            g = np.where(keep, density(x), 0.0)
            if np.any(g < 0.0):
                raise RayTraceError("source density must be nonnegative")
            keep &= rng.uniform(0.0, bound, len(x)) < g
        x = x[keep]
        out.append(x)
        got += len(x)
        if got >= want:
            return np.concatenate(out)[:want]
    raise RayTraceError("source density (restricted to the reflector domain) is zero")


def trace_batch(func, count: int, seed: int, density=None, density_bound: float | None = None,
                n: int | None = None) -> RayBatch:
    """Sample ``count`` source directions proportional to ``density`` and reflect them.

    ``func`` is a radial function with ``evaluate`` (and optionally
    ``domain_mask``). ``density`` is a callable on unit vectors (uniform
    when omitted); rejection sampling needs an upper bound, estimated from
    a fixed probe set when ``density_bound`` is not given.
    """
    if count < 1:
        raise RayTraceError("ray count must be at least 1")
    if n is None:
        n = func.n
    bound = density_bound
    if density is not None and bound is None:
        probe = uniform_directions(chunk_generator(seed, (1 << 63) - 1), 20_000, n)
        vals = density(probe)
        if not np.any(vals > 0):
            raise RayTraceError("source density is identically zero")
        bound = 1.25 * float(np.max(vals))
    sources = []
    for c, start in enumerate(range(0, count, CHUNK)):
        want = min(CHUNK, count - start)
        sources.append(_sample_chunk(func, n, density, bound, chunk_generator(seed, c), want))
    src = np.concatenate(sources)
    hits = np.empty_like(src)
    refl = np.empty_like(src)
    for start in range(0, count, CHUNK):
        sl = slice(start, start + CHUNK)
        pts = ChartPoints.from_ambient(src[sl])
        R = RadialHypersurface.from_function(func, pts)
        hits[sl] = R.position
        refl[sl] = reflection_map(R)
    return RayBatch(int(seed), int(count), src, hits, refl)


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EqualAreaBins:
    """Equal-area bins: arcs on S^1, latitude bands split in longitude on S^2."""

    n: int
    total: int
    z_edges: np.ndarray = field(default=None)  # band boundaries in z = cos(colatitude), descending
    band_counts: np.ndarray = field(default=None)

    @classmethod
    def build(cls, n: int, total: int | None = None) -> "EqualAreaBins":
        if n == 1:
            total = 64 if total is None else int(total)
            if total < 2:
                raise RayTraceError("need at least two bins")
            return cls(1, total)
        total = 192 if total is None else int(total)
        if total < 2:
            raise RayTraceError("need at least two bins")
        nb = max(2, int(round(np.sqrt(np.pi * total / 4.0))))
        nb = min(nb, total)
        centers = (np.arange(nb) + 0.5) * np.pi / nb
        raw = np.sin(centers)
        raw = raw / raw.sum() * total
        counts = np.maximum(1, np.floor(raw).astype(int))
        while counts.sum() < total:
            counts[np.argmax(raw - counts)] += 1
        while counts.sum() > total:
            i = np.argmax(np.where(counts > 1, counts - raw, -np.inf))
            counts[i] -= 1
        cum = np.concatenate([[0], np.cumsum(counts)])
        z = 1.0 - 2.0 * cum / total
        z[-1] = -1.0
        return cls(2, total, z, counts)

    @property
    def area(self) -> float:
        return (2.0 * np.pi if self.n == 1 else 4.0 * np.pi) / self.total

    def assign(self, y: np.ndarray) -> np.ndarray:
        """Bin index of unit vectors y."""
        if self.n == 1:
            th = np.mod(np.arctan2(y[:, 1], y[:, 0]), 2.0 * np.pi)
            return np.minimum((th / (2.0 * np.pi) * self.total).astype(int), self.total - 1)
        z = np.clip(y[:, 2], -1.0, 1.0)
        band = np.searchsorted(-self.z_edges, -z, side="right") - 1
        band = np.clip(band, 0, len(self.band_counts) - 1)
        lam = np.mod(np.arctan2(y[:, 1], y[:, 0]), 2.0 * np.pi)
        k = self.band_counts[band]
        j = np.minimum((lam / (2.0 * np.pi) * k).astype(int), k - 1)
        offsets = np.concatenate([[0], np.cumsum(self.band_counts)])[:-1]
        return offsets[band] + j

    def cells(self):
        """Per bin: (z_hi, z_lo, lon_lo, lon_hi) on S^2 or (theta_lo, theta_hi) on S^1."""
        if self.n == 1:
            t = 2.0 * np.pi * np.arange(self.total + 1) / self.total
            return [(t[i], t[i + 1]) for i in range(self.total)]
        out = []
        for b, k in enumerate(self.band_counts):
            for j in range(k):
                out.append((self.z_edges[b], self.z_edges[b + 1], 2 * np.pi * j / k, 2 * np.pi * (j + 1) / k))
        return out

    def centers(self) -> np.ndarray:
        """Bin centers: theta on S^1, (colatitude, longitude) on S^2."""
        if self.n == 1:
            return np.array([[0.5 * (a + b)] for a, b in self.cells()])
        return np.array([[np.arccos(0.5 * (zh + zl)), 0.5 * (l0 + l1)] for zh, zl, l0, l1 in self.cells()])

    def quadrature(self, per_side: int = 8):
        """Equal-weight midpoint nodes in every bin: (nodes (B, Q, n+1), weights (Q,))."""
        q = (np.arange(per_side) + 0.5) / per_side
        nodes = []
        if self.n == 1:
            for a, b in self.cells():
                t = a + (b - a) * q
                nodes.append(np.stack([np.cos(t), np.sin(t)], -1))
            w = np.full(per_side, self.area / per_side)
            return np.array(nodes), w
        for zh, zl, l0, l1 in self.cells():
            z = zh + (zl - zh) * q
            lam = l0 + (l1 - l0) * q
            zz, ll = np.meshgrid(z, lam, indexing="ij")
            r = np.sqrt(np.clip(1.0 - zz**2, 0.0, None))
            nodes.append(np.stack([r * np.cos(ll), r * np.sin(ll), zz], -1).reshape(-1, 3))
        w = np.full(per_side**2, self.area / per_side**2)
        return np.array(nodes), w


@dataclass(frozen=True)
class FarFieldHistogram:
    bins: EqualAreaBins
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def density(self) -> np.ndarray:
        """Probability per unit solid angle; integrates to one."""
        return self.counts / (self.total * self.bins.area)

    @property
    def stderr(self) -> np.ndarray:
        p = self.counts / self.total
        return np.sqrt(self.total * p * (1.0 - p)) / (self.total * self.bins.area)

    def to_csv(self, path, expected: np.ndarray | None = None) -> None:
        centers = self.bins.centers()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["bin"] + (["theta"] if self.bins.n == 1 else ["colatitude", "longitude"])
            head += ["area", "count", "density", "stderr"]
            if expected is not None:
                head.append("expected_density")
            w.writerow(head)
            for b in range(self.bins.total):
                row = [b] + [repr(float(c)) for c in centers[b]]
                row += [repr(self.bins.area), int(self.counts[b]), repr(float(self.density[b])), repr(float(self.stderr[b]))]
                if expected is not None:
                    row.append(repr(float(expected[b])))
                w.writerow(row)


def farfield_density(batch: RayBatch, bins: EqualAreaBins | int | None = None) -> FarFieldHistogram:
    if batch.count == 0:
        raise RayTraceError("empty batch")
    if not isinstance(bins, EqualAreaBins):
        bins = EqualAreaBins.build(batch.n, bins)
    if bins.n != batch.n:
        raise RayTraceError("binning dimension does not match the batch")
    idx = bins.assign(batch.reflected)
    counts = np.bincount(idx, minlength=bins.total).astype(np.int64)
    return FarFieldHistogram(bins, counts)


# ---------------------------------------------------------------------------
# Pushforward oracle
# ---------------------------------------------------------------------------


def _tangent_frame(points: ChartPoints) -> np.ndarray:
    """Orthonormal tangent vectors f_a = x_i (E^{-1})_{ia}, shape (P, n, n+1)."""
    return np.einsum("pia,pib->pba", points.basis, points.metric.frame_inv)


def preimage(func, y: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-13,
             max_iter: int = 60) -> np.ndarray:
    """Solve gamma(x) = y by Newton steps in the tangent plane.

    The differential of gamma comes from the closed form in terms of kappa,
    so the iteration needs no finite differences.
    """
    y = np.asarray(y, dtype=float)
    x = -y.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        pts = ChartPoints.from_ambient(x)
        R = RadialHypersurface.from_function(func, pts)
        r = y - reflection_map(R)
        err = np.linalg.norm(r, axis=1)
        if np.max(err) < tol:
            return x
        dg = reflection_differential(R)  # (P, n, n+1) chart derivatives
        D = np.einsum("pia,pib->pab", dg, pts.metric.frame_inv)  # along frame directions
        A = np.einsum("pab,pac->pbc", D, D)
        rhs = np.einsum("pab,pa->pb", D, r)
        s = np.linalg.solve(A, rhs[..., None])[..., 0]
        step = np.einsum("pb,pba->pa", s, _tangent_frame(pts))
        norm = np.linalg.norm(step, axis=1, keepdims=True)
        step = np.where(norm > 0.5, step * 0.5 / np.maximum(norm, 1e-300), step)
        x = x + step
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    pts = ChartPoints.from_ambient(x)
    err = np.linalg.norm(y - reflection_map(RadialHypersurface.from_function(func, pts)), axis=1)
    if np.max(err) > 1e-9:
        raise RayTraceError(f"preimage iteration did not converge (residual {np.max(err):.2e})")
    return x


def pushforward_probabilities(func, bins: EqualAreaBins, density=None, normalization: float | None = None,
                              per_side: int = 8) -> np.ndarray:
    """Expected bin probabilities from f(y) = g(x) / |S_n(x)|, gamma(x) = y.

    ``density`` defaults to the uniform source; for other densities
    ``normalization`` is the integral of g over the sphere.
    """
    nodes, w = bins.quadrature(per_side)
    B, Q = nodes.shape[:2]
    y = nodes.reshape(B * Q, -1)
    x = preimage(func, y)
    R = RadialHypersurface.from_function(func, ChartPoints.from_ambient(x))
    Sn = np.abs(principal_intensities(R).S[:, -1])
    vol = 2.0 * np.pi if bins.n == 1 else 4.0 * np.pi
    if density is None:
        g = np.full(len(x), 1.0 / vol)
    else:
        if normalization is None:
            raise RayTraceError("a non-uniform source density needs its normalization")
        g = density(x) / normalization
    f = (g / Sn).reshape(B, Q)
    return f @ w


def uniform_probabilities(bins: EqualAreaBins) -> np.ndarray:
    return np.full(bins.total, 1.0 / bins.total)


@dataclass(frozen=True)
class DensityComparison:
    z_scores: np.ndarray
    chi2: float
    dof: int
    p_value: float
    sigma: float

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))

    @property
    def all_within(self) -> bool:
        return self.max_abs_z <= self.sigma

    def as_dict(self) -> dict:
        return {
            "max_abs_z": self.max_abs_z,
            "bins_outside": int(np.sum(np.abs(self.z_scores) > self.sigma)),
            "sigma": self.sigma,
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "all_within": self.all_within,
        }


def compare_histogram(hist: FarFieldHistogram, probabilities: np.ndarray, sigma: float = 3.0) -> DensityComparison:
    """Per-bin z-scores and a chi-square goodness-of-fit test against ``probabilities``."""
    N = hist.total
    p = np.asarray(probabilities, dtype=float)
    expected = N * p
    sd = np.sqrt(N * p * (1.0 - p))
    z = (hist.counts - expected) / sd
    chi2 = float(np.sum((hist.counts - expected) ** 2 / expected))
    dof = hist.bins.total - 1
    return DensityComparison(z, chi2, dof, float(stats.chi2.sf(chi2, dof)), sigma)


# ---------------------------------------------------------------------------
# Focal and Jacobian checks
# ---------------------------------------------------------------------------


def line_point_distance(origin: np.ndarray, direction: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Distance from ``point`` to the full lines origin + s direction, s real."""
    d = point[None, :] - origin
    along = np.einsum("pa,pa->p", d, direction)
    return np.linalg.norm(d - along[:, None] * direction, axis=1)


def focal_concentration(shape, batch: RayBatch) -> float:
    """Max distance from the reflected lines to the shape's second focus."""
    if getattr(shape, "ecc", None) is None:
        raise RayTraceError("focal concentration needs a conic of revolution")
    if shape.ecc == 1.0:
        raise RayTraceError("the paraboloid has its second focus at infinity")
    a = shape.second_focus()
    return float(np.max(line_point_distance(batch.hit, batch.reflected, a)))


def jacobian_consistency(R: RadialHypersurface) -> float:
    """sup | sqrt(det e_hat / det e) - |S_n| | / (1 + |S_n|)."""
    kappa = intensity_form(R)
    eh = ehat_form(R, kappa).values
    ratio = np.clip(np.linalg.det(eh) / R.points.metric.det, 0.0, None)
    Sn = np.abs(principal_intensities(R, kappa).S[:, -1])
    return float(np.max(np.abs(np.sqrt(ratio) - Sn) / (1.0 + Sn)))


def write_sidecar(path, params: dict) -> None:
    with open(path, "w") as fh:
        json.dump(params, fh, indent=2, sort_keys=True)
        fh.write("\n")
