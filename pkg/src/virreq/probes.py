"""Probe generation for Type-II requests.

Two protocols: gamma-centerness sampling (simulated clicks, shrunken
bounding box around the mass center) and stride-grid sampling (dense
probes for non-probing inference).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import EmptyRegion
from .masks import BinaryMask, mass_center

DEFAULT_GAMMA = 0.0
DEFAULT_STRIDE = 16


@dataclass(frozen=True)
class GammaPolicy:
    """gamma=0 probes exactly the mass center; gamma=1 covers the region."""

    gamma: float = DEFAULT_GAMMA
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class GridPolicy:
    stride: int = DEFAULT_STRIDE

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def anchor(self) -> Tuple[int, int]:
        return (self.stride // 2, self.stride // 2)


@dataclass(frozen=True)
class ProbeSample:
    a: int
    b: int
    in_region: bool


class Lost:
    """Marker for an instance whose evaluation region vanished (IoU 0)."""

    _instance: Optional["Lost"] = None

    def __new__(cls) -> "Lost":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Lost"


LOST = Lost()

Box = Tuple[float, float, float, float]


def shrink_box(box: Box, mass: Tuple[float, float], gamma: float) -> Box:
    """Shrink a bounding box toward the mass center by factor gamma."""
    a0, b0, a1, b1 = box
    am, bm = mass
    return (
        am - gamma * (am - a0),
        bm - gamma * (bm - b0),
        am + gamma * (a1 - am),
        bm + gamma * (b1 - bm),
    )


def sample_probe(region: BinaryMask, policy: GammaPolicy,
                 rng: Optional[np.random.Generator] = None) -> ProbeSample:
    """Draw one probe pixel from the shrunken box around the mass center.

    Uniform over region ∩ shrunken-box when that is nonempty; otherwise
    uniform over the box alone, in which case the probe may fall off the
    region (flagged, never silently re-sampled).
    """
    if region.is_empty():
        raise EmptyRegion("cannot probe an empty region")
    center = mass_center(region)

    if policy.gamma == 0.0:
        ra = int(round(center.a))
        rb = int(round(center.b))
        height, width = region.shape
        ra = min(max(ra, 0), width - 1)
        rb = min(max(rb, 0), height - 1)
        if region.get(ra, rb):
            ia, ib = center.inside
            return ProbeSample(ia, ib, True)
        return ProbeSample(ra, rb, False)

    if rng is None:
        rng = np.random.default_rng(policy.seed)
    a0, b0, a1, b1 = region.bounding_box()
    sa0, sb0, sa1, sb1 = shrink_box((a0, b0, a1, b1), (center.a, center.b),
                                    policy.gamma)
    lo_a, hi_a = int(np.ceil(sa0)), int(np.floor(sa1))
    lo_b, hi_b = int(np.ceil(sb0)), int(np.floor(sb1))

    window = region.bits[lo_b:hi_b + 1, lo_a:hi_a + 1]
    ys, xs = np.nonzero(window)
    if len(xs) > 0:
        i = int(rng.integers(len(xs)))
        return ProbeSample(lo_a + int(xs[i]), lo_b + int(ys[i]), True)

    # Box holds no region pixel: fall back to the box alone.
    if lo_a > hi_a or lo_b > hi_b:
        # Box so small it contains no integer pixel; use its center.
        pa = int(round((sa0 + sa1) / 2.0))
        pb = int(round((sb0 + sb1) / 2.0))
    else:
        pa = lo_a + int(rng.integers(hi_a - lo_a + 1))
        pb = lo_b + int(rng.integers(hi_b - lo_b + 1))
    return ProbeSample(pa, pb, bool(region.get(pa, pb)))


def evaluation_region(pred_semantic: BinaryMask,
                      gt_instance: BinaryMask) -> Union[BinaryMask, Lost]:
    """Region a simulated click may land in; Lost when the overlap is empty."""
    overlap = pred_semantic.intersection(gt_instance)
    if overlap.is_empty():
        return LOST
    return overlap


def grid_probes(region: BinaryMask, policy: GridPolicy) -> List[Tuple[int, int]]:
    """All on-region grid points (anchor + k*stride), row-major order."""
    height, width = region.shape
    oa, ob = policy.anchor
    aa = np.arange(oa, width, policy.stride)
    bb = np.arange(ob, height, policy.stride)
    if len(aa) == 0 or len(bb) == 0:
        return []
    sub = region.bits[np.ix_(bb, aa)]
    ys, xs = np.nonzero(sub)
    return [(int(aa[x]), int(bb[y])) for y, x in zip(ys, xs)]
