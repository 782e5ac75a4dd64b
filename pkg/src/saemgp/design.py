"""Space-filling designs over a bounded box and their coverage radius.

The coverage radius (largest distance from any point of the box to its
nearest design point) is the quantity that drives the surrogate error
bounds, so it is exposed alongside the construction itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import DomainError

GRID_CAP = 10**6
MC_SAMPLES = 10**6


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lower_1, upper_1] x ... x [lower_d, upper_d]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise DomainError("box bounds must be 1-d arrays of equal length")
        if lower.size < 1:
            raise DomainError("box must have dimension >= 1")
        if not np.all(lower < upper):
            raise DomainError("box requires lower < upper in every coordinate")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points) -> bool:
        pts = np.atleast_2d(points)
        return bool(
            np.all(pts >= self.lower - 1e-12) and np.all(pts <= self.upper + 1e-12)
        )


@dataclass(frozen=True)
class Design:
    """A fixed set of evaluation points inside a box."""

    points: np.ndarray
    box: Box
    seed: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] != self.box.dim:
            raise DomainError("design points do not match the box dimension")
        if pts.shape[0] < 1:
            raise DomainError("design needs at least one point")
        if not self.box.contains(pts):
            raise DomainError("design points must lie inside the box")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def lhs_design(box: Box, n_d: int, seed: int, n_candidates: int = 50) -> Design:
    """Latin hypercube design, best of `n_candidates` draws by maximin distance.

    Each marginal has exactly one point per equal-width stratum; points are
    uniform within their stratum.  The single-point design is centered.
    """
    if n_d < 1:
        raise DomainError("n_d must be >= 1")
    if n_d == 1:
        mid = (box.lower + box.upper) / 2.0
        return Design(points=mid[None, :], box=box, seed=seed)

    rng = np.random.default_rng(seed)
    best_pts = None
    best_score = -np.inf
    for _ in range(n_candidates):
        unit = np.empty((n_d, box.dim))
        for k in range(box.dim):
            perm = rng.permutation(n_d)
            unit[:, k] = (perm + rng.uniform(size=n_d)) / n_d
        score = pdist(unit).min()
        if score > best_score:
            best_score = score
            best_pts = unit
    pts = box.lower + best_pts * box.width
    return Design(points=pts, box=box, seed=seed)


def covering_distance(
    design: Design,
    resolution: int,
    grid_cap: int = GRID_CAP,
    mc_samples: int = MC_SAMPLES,
) -> float:
    """Worst-case distance from the box to the design, on a regular grid.

    Falls back to Monte Carlo (seeded from the design) when the full grid
    would exceed `grid_cap` points; both paths approximate the true radius
    from below.
    """
    if resolution < 2:
        raise DomainError("resolution must be >= 2")
    box = design.box
    tree = cKDTree(design.points)
    if resolution**box.dim <= grid_cap:
        axes = [
            np.linspace(box.lower[k], box.upper[k], resolution) for k in range(box.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        dists, _ = tree.query(grid)
        return float(dists.max())
    rng = np.random.default_rng(np.random.SeedSequence((design.seed, 0xC07E)))
    worst = 0.0
    chunk = 100_000
    remaining = mc_samples
    while remaining > 0:
        m = min(chunk, remaining)
        sample = rng.uniform(box.lower, box.upper, size=(m, box.dim))
        dists, _ = tree.query(sample)
        worst = max(worst, float(dists.max()))
        remaining -= m
    return worst


def design_to_csv(design: Design, path) -> None:
    header = [f"x{k + 1}" for k in range(design.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in design.points:
            writer.writerow([repr(float(v)) for v in row])


def design_to_json(design: Design) -> dict:
    return {
        "box": {"lower": design.box.lower.tolist(), "upper": design.box.upper.tolist()},
        "points": design.points.tolist(),
        "seed": int(design.seed),
    }


def design_from_json(obj: dict) -> Design:
    box = Box(np.asarray(obj["box"]["lower"]), np.asarray(obj["box"]["upper"]))
    return Design(points=np.asarray(obj["points"]), box=box, seed=int(obj["seed"]))
