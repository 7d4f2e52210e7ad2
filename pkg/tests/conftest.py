import numpy as np
import pytest

from regionrep.core import ImageDims, MaskSet, MaskSource, rle_encode


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_partition(rng, dims: ImageDims, k: int) -> MaskSet:
    """Voronoi partition of the image around k random sites."""
    h, w = dims.height, dims.width
    sites = np.stack(
        [rng.integers(0, h, size=k), rng.integers(0, w, size=k)], axis=1
    ).astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    owner = np.argmin(d2, axis=2)
    present = np.unique(owner)
    masks = [rle_encode(owner == i, source=MaskSource.SYNTHETIC) for i in present]
    return MaskSet(dims, masks, [int(i) for i in present])


def random_masks(rng, dims: ImageDims, k: int) -> MaskSet:
    """k random rectangle masks; may overlap and leave gaps."""
    h, w = dims.height, dims.width
    masks = []
    for _ in range(k):
        top = int(rng.integers(0, h))
        left = int(rng.integers(0, w))
        bh = int(rng.integers(1, h - top + 1))
        bw = int(rng.integers(1, w - left + 1))
        bitmap = np.zeros((h, w), dtype=bool)
        bitmap[top : top + bh, left : left + bw] = True
        masks.append(rle_encode(bitmap))
    return MaskSet(dims, masks)
