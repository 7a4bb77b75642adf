"""
Synthetic labeled point-cloud datasets.

Shapes are sampled uniformly on their surfaces, jittered per cloud (random
rotation about z and a mild per-axis stretch) and normalized into [−1, 1]³.
The classes differ in coarse global shape, so a small max-pooling classifier
separates them at full resolution while very sparse random samples confuse them.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from errors import DomainError
from schemas import DatasetSpec, ShapeClass

logger = logging.getLogger(__name__)

# stretch factor range applied per axis before normalization
STRETCH_RANGE = (0.85, 1.15)


@dataclass
class PointDataset:
    """Labeled clouds stored class-major: clouds (K, N, 3), labels (K,)"""

    clouds: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.clouds.shape[0])

    @property
    def n(self) -> int:
        return int(self.clouds.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def batches(self, batch_size: int, rng: np.random.Generator = None) -> Iterator[np.ndarray]:
        """Index arrays of at most batch_size; shuffled when an rng is given"""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            yield order[start:start + batch_size]

    def subset(self, indices: Sequence[int]) -> "PointDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return PointDataset(self.clouds[idx], self.labels[idx], list(self.class_names))


def _unit_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube_surface(rng: np.random.Generator, n: int) -> np.ndarray:
    # six faces of equal area
    face = rng.integers(0, 6, size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = face // 2
    pts[np.arange(n), axis] = np.where(face % 2 == 0, -1.0, 1.0)
    return pts


def _cylinder(rng: np.random.Generator, n: int) -> np.ndarray:
    # radius 1, z in [−1, 1]: lateral area 4π, caps 2π together
    lateral = rng.uniform(size=n) < 2.0 / 3.0
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    radius = np.where(lateral, 1.0, np.sqrt(rng.uniform(size=n)))
    z = np.where(lateral, rng.uniform(-1.0, 1.0, size=n), np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0))
    return np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)


def _two_spheres(rng: np.random.Generator, n: int) -> np.ndarray:
    centers = np.array([[-0.6, 0.0, 0.0], [0.6, 0.0, 0.0]])
    which = rng.integers(0, 2, size=n)
    return 0.5 * _unit_sphere(rng, n) + centers[which]


_SAMPLERS = {
    ShapeClass.sphere: _unit_sphere,
    ShapeClass.cube_surface: _cube_surface,
    ShapeClass.cylinder: _cylinder,
    ShapeClass.two_spheres: _two_spheres,
}


def sample_shape(shape: Union[ShapeClass, str], n: int, rng: np.random.Generator) -> np.ndarray:
    """n raw surface points of one shape, before jitter and normalization"""
    if n < 1:
        raise DomainError(f"cannot sample {n} points")
    return _SAMPLERS[ShapeClass(shape)](rng, n)


def normalize_unit_cube(points: np.ndarray) -> np.ndarray:
    """Center the bounding box at the origin and scale its largest half-extent to 1"""
    lo, hi = points.min(axis=0), points.max(axis=0)
    half = float((hi - lo).max()) / 2.0
    if half == 0.0:
        return points - (lo + hi) / 2.0
    return (points - (lo + hi) / 2.0) / half


def _jitter(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    stretch = rng.uniform(*STRETCH_RANGE, size=3)
    return (points @ rot.T) * stretch


def gen_synthetic(classes: Sequence[Union[ShapeClass, str]], n: int, per_class: int, seed) -> PointDataset:
    """
    Labeled synthetic clouds, per_class of each class in the given order.

    Args:
        classes: shape classes; label i refers to classes[i]
        n: points per cloud (>= 8)
        per_class: clouds per class
        seed: int or numpy SeedSequence

    Returns:
        PointDataset with clouds in [−1, 1]³
    """
    if n < 8:
        raise DomainError(f"synthetic clouds need n >= 8, got {n}")
    if per_class < 0:
        raise DomainError(f"per_class must be >= 0, got {per_class}")
    shapes = [ShapeClass(c) for c in classes]
    rng = np.random.default_rng(seed)
    clouds = np.empty((len(shapes) * per_class, n, 3))
    labels = np.empty(len(shapes) * per_class, dtype=np.int64)
    k = 0
    for label, shape in enumerate(shapes):
        for _ in range(per_class):
            clouds[k] = normalize_unit_cube(_jitter(sample_shape(shape, n, rng), rng))
            labels[k] = label
            k += 1
    logger.debug(f"[DATASET] generated {k} clouds of {n} points over {len(shapes)} classes")
    return PointDataset(clouds, labels, [s.value for s in shapes])


def make_splits(spec: DatasetSpec) -> Tuple[PointDataset, PointDataset]:
    """Independent train and test sets drawn from one seed"""
    train_seed, test_seed = np.random.SeedSequence(spec.seed).spawn(2)
    train = gen_synthetic(spec.classes, spec.n, spec.train_per_class, train_seed)
    test = gen_synthetic(spec.classes, spec.n, spec.test_per_class, test_seed)
    logger.info(f"[DATASET] {len(train)} train / {len(test)} test clouds, N={spec.n}, "
                f"classes={[c.value for c in spec.classes]}")
    return train, test
