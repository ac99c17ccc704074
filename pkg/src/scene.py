#  OpenSSCR: Open self-supervised counterfactual reasoning for iterative image editing.
#  Copyright (C) 2020  The OpenSSCR developers
#
#  This program is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  This program is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""The synthetic editing world.

Scenes are sets of coloured objects on a K×K grid. The module executes parsed edits on scenes,
renders scenes into images, detects scenes back from images, and builds the relational scene
graphs used by the RelSim metric.
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Tuple, Union

import numpy as np

from matplotlib.pyplot import imsave
from numba import njit
from numpy import ndarray
from scipy.spatial.distance import cdist

COLORS = ('gray', 'red', 'blue', 'green', 'brown', 'purple', 'cyan', 'yellow')
SHAPES = ('cube', 'sphere', 'cylinder')

RGB = {'gray':   (0.50, 0.50, 0.50),
       'red':    (0.90, 0.10, 0.10),
       'blue':   (0.10, 0.20, 0.90),
       'green':  (0.10, 0.70, 0.20),
       'brown':  (0.55, 0.35, 0.15),
       'purple': (0.55, 0.15, 0.75),
       'cyan':   (0.10, 0.80, 0.85),
       'yellow': (0.95, 0.85, 0.10)}

BACKGROUND = (0.0, 0.0, 0.0)
GRID = 8
IMAGE_SIZE = 32


class InfeasibleEditError(ValueError):
    pass


class PlacementError(ValueError):
    pass


class DuplicateObjectError(ValueError):
    pass


class Relation(str, Enum):
    CENTER = 'at-the-center'
    BEHIND = 'behind'
    FRONT = 'in-front-of'
    LEFT = 'left-of'
    RIGHT = 'right-of'


SPATIAL_RELATIONS = (Relation.LEFT, Relation.RIGHT, Relation.FRONT, Relation.BEHIND)


@dataclass(frozen=True, order=True)
class ObjectSpec:
    color: str
    shape: str

    def __post_init__(self):
        if self.color not in COLORS:
            raise ValueError(f"Unknown color '{self.color}'")
        if self.shape not in SHAPES:
            raise ValueError(f"Unknown shape '{self.shape}'")

    def __str__(self):
        return f"{self.color} {self.shape}"


ALL_SPECS = tuple(ObjectSpec(c, s) for c in COLORS for s in SHAPES)


@dataclass(frozen=True)
class ParsedEdit:
    """Structured meaning of an instruction: add `target` in `relation` to `anchor`."""
    target: ObjectSpec
    relation: Relation
    anchor: Optional[ObjectSpec] = None

    def __post_init__(self):
        if (self.anchor is None) != (self.relation == Relation.CENTER):
            raise ValueError("An edit has an anchor if and only if its relation is not 'at-the-center'")


@dataclass(frozen=True)
class Placement:
    spec: ObjectSpec
    x: int
    y: int


@dataclass(frozen=True, eq=False)
class Scene:
    """A set of placed objects on a `grid`×`grid` board.

    Placements keep their insertion order, but scenes compare equal when they hold the same
    placements: a detected scene cannot know in which order its objects were added.
    """
    placements: Tuple[Placement, ...] = ()
    grid: int = GRID

    def __post_init__(self):
        cells, specs = set(), set()
        for p in self.placements:
            if not (0 <= p.x < self.grid and 0 <= p.y < self.grid):
                raise PlacementError(f"{p.spec} at ({p.x}, {p.y}) is outside the {self.grid}x{self.grid} grid")
            if (p.x, p.y) in cells:
                raise PlacementError(f"Cell ({p.x}, {p.y}) holds more than one object")
            if p.spec in specs:
                raise DuplicateObjectError(f"{p.spec} appears more than once")
            cells.add((p.x, p.y))
            specs.add(p.spec)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return self.grid == other.grid and frozenset(self.placements) == frozenset(other.placements)

    def __hash__(self):
        return hash((self.grid, frozenset(self.placements)))

    def __len__(self):
        return len(self.placements)

    @property
    def specs(self) -> FrozenSet[ObjectSpec]:
        return frozenset(p.spec for p in self.placements)

    def find(self, spec: ObjectSpec) -> Optional[Placement]:
        for p in self.placements:
            if p.spec == spec:
                return p
        return None

    def occupied(self, x: int, y: int) -> bool:
        return any(p.x == x and p.y == y for p in self.placements)

    def add(self, placement: Placement) -> 'Scene':
        return Scene(self.placements + (placement,), self.grid)


def _satisfies(relation: Relation, x: int, y: int, anchor: Placement) -> bool:
    if relation == Relation.LEFT:
        return x < anchor.x
    if relation == Relation.RIGHT:
        return x > anchor.x
    if relation == Relation.BEHIND:
        return y < anchor.y
    if relation == Relation.FRONT:
        return y > anchor.y
    raise ValueError(f"'{relation}' is not a spatial relation")


def apply_edit(scene: Scene, edit: ParsedEdit) -> Scene:
    """Executes an edit on a scene, adding exactly one object.

    Absolute edits place the target at the grid centre (K/2, K/2). Relative edits consider the free
    cells that strictly satisfy the relation with respect to the anchor and choose the one closest to
    the anchor, breaking distance ties by row and then by column. The ordering is total and no random
    choice is involved, so the placement is deterministic and the edit takes no seed.

    Parameters
    ----------
    scene: Scene
        Scene before the edit.
    edit: ParsedEdit
        Edit to execute.

    Returns
    -------
        A new scene with the prior placements unchanged and the target appended.
    """
    if edit.target in scene.specs:
        raise DuplicateObjectError(f"{edit.target} is already in the scene")
    k = scene.grid
    if edit.relation == Relation.CENTER:
        x, y = k // 2, k // 2
        if scene.occupied(x, y):
            raise PlacementError(f"The centre cell ({x}, {y}) is occupied")
        return scene.add(Placement(edit.target, x, y))

    anchor = scene.find(edit.anchor)
    if anchor is None:
        raise InfeasibleEditError(f"Anchor {edit.anchor} is not in the scene")
    candidates = [(np.hypot(x - anchor.x, y - anchor.y), y, x)
                  for y in range(k) for x in range(k)
                  if _satisfies(edit.relation, x, y, anchor) and not scene.occupied(x, y)]
    if not candidates:
        raise PlacementError(f"No free cell {edit.relation.value} {edit.anchor}")
    _, y, x = min(candidates)
    return scene.add(Placement(edit.target, x, y))


# Rendering and detection
# =======================
@lru_cache(maxsize=None)
def glyph_masks(cell: int) -> Tuple[ndarray, ...]:
    """Binary cube, sphere, and cylinder masks for a cell of `cell`×`cell` pixels.

    Cubes fill the cell, spheres are discs that drop the cell corners, and cylinders are vertical
    bars over the middle half of the columns.
    """
    if cell < 4:
        raise ValueError("Glyphs need cells of at least 4x4 pixels to stay distinguishable")
    i, j = np.mgrid[:cell, :cell]
    c = 0.5 * (cell - 1)
    cube = np.ones((cell, cell))
    sphere = ((i - c) ** 2 + (j - c) ** 2 <= (0.5 * cell) ** 2).astype(float)
    cylinder = ((j >= cell // 4) & (j < cell - cell // 4)).astype(float)
    return cube, sphere, cylinder


@lru_cache(maxsize=None)
def glyph_templates(cell: int) -> ndarray:
    """Flattened cell templates, one row per spec in ALL_SPECS order, and the background last."""
    masks = dict(zip(SHAPES, glyph_masks(cell)))
    background = np.asarray(BACKGROUND)
    rows = []
    for spec in ALL_SPECS:
        m = masks[spec.shape][..., None]
        rows.append((m * np.asarray(RGB[spec.color]) + (1 - m) * background).reshape(-1))
    rows.append(np.broadcast_to(background, (cell, cell, 3)).reshape(-1))
    return np.array(rows)


@njit(cache=True)
def _paint(image, mask, color, row, col):
    for i in range(mask.shape[0]):
        for j in range(mask.shape[1]):
            if mask[i, j] > 0.0:
                for c in range(3):
                    image[row + i, col + j, c] = color[c]


def render(scene: Scene, size: int = IMAGE_SIZE) -> ndarray:
    """Renders a scene into a (size, size, 3) image with values in [0, 1]."""
    cell = size // scene.grid
    if cell * scene.grid != size:
        raise ValueError(f"Image size {size} is not a multiple of the grid size {scene.grid}")
    image = np.empty((size, size, 3))
    image[...] = BACKGROUND
    masks = dict(zip(SHAPES, glyph_masks(cell)))
    for p in scene.placements:
        _paint(image, masks[p.spec.shape], np.asarray(RGB[p.spec.color]), p.y * cell, p.x * cell)
    return image


def detect(image: ndarray, grid: int = GRID, max_error: float = 0.02) -> Scene:
    """Detects the objects of an image by nearest-template matching in every cell.

    Parameters
    ----------
    image: ndarray
        (P, P, 3) image, either rendered or generated.
    grid: int
        Grid size K.
    max_error: float
        Confidence threshold: the largest mean squared pixel error a cell may have to its best
        matching object template and still count as a detection.

    Returns
    -------
        Detected scene. When the same spec is matched in several cells, the best match is kept.
    """
    size = image.shape[0]
    cell = size // grid
    patches = (np.asarray(image, dtype=np.float64)
               .reshape(grid, cell, grid, cell, 3).transpose(0, 2, 1, 3, 4).reshape(grid * grid, -1))
    templates = glyph_templates(cell)
    errors = cdist(patches, templates, 'sqeuclidean') / templates.shape[1]
    best = errors.argmin(1)
    nspec = len(ALL_SPECS)

    found = {}
    for c in np.flatnonzero(best < nspec):
        e = errors[c, best[c]]
        if e > max_error:
            continue
        spec = ALL_SPECS[best[c]]
        if spec not in found or e < found[spec][0]:
            found[spec] = (e, c)
    placements = sorted((Placement(spec, int(c % grid), int(c // grid)) for spec, (_, c) in found.items()),
                        key=lambda p: (p.y, p.x))
    return Scene(tuple(placements), grid)


def save_png(image: ndarray, path: Union[Path, str]):
    imsave(Path(path), np.clip(image, 0.0, 1.0))


def write_ppm(image: ndarray, path: Union[Path, str]):
    """Writes an image as a binary PPM file."""
    data = (np.clip(image, 0.0, 1.0) * 255).round().astype(np.uint8)
    with open(path, 'wb') as f:
        f.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode('ascii'))
        f.write(data.tobytes())


# Scene graphs
# ============
@dataclass(frozen=True)
class Edge:
    src: ObjectSpec
    dst: ObjectSpec
    relation: Relation


@dataclass(frozen=True)
class SceneGraph:
    vertices: Tuple[ObjectSpec, ...]
    edges: FrozenSet[Edge]


def scene_graph(scene: Scene) -> SceneGraph:
    """Builds the left/right and front/behind relation graph of a scene.

    For every ordered pair (a, b): a is left of b iff x_a < x_b, right of b iff x_a > x_b, behind b
    iff y_a < y_b, and in front of b iff y_a > y_b.
    """
    edges = set()
    for a in scene.placements:
        for b in scene.placements:
            if a is b:
                continue
            if a.x != b.x:
                edges.add(Edge(a.spec, b.spec, Relation.LEFT if a.x < b.x else Relation.RIGHT))
            if a.y != b.y:
                edges.add(Edge(a.spec, b.spec, Relation.BEHIND if a.y < b.y else Relation.FRONT))
    return SceneGraph(tuple(p.spec for p in scene.placements), frozenset(edges))


def random_scene(rng: np.random.Generator, n: int, grid: int = GRID) -> Scene:
    """Uniformly random scene with `n` distinct objects in distinct cells."""
    specs = rng.choice(len(ALL_SPECS), size=n, replace=False)
    cells = rng.choice(grid * grid, size=n, replace=False)
    return Scene(tuple(Placement(ALL_SPECS[s], int(c % grid), int(c // grid)) for s, c in zip(specs, cells)), grid)


def scene_from_records(records: Iterable, grid: int = GRID) -> Scene:
    return Scene(tuple(Placement(ObjectSpec(c, s), int(x), int(y)) for c, s, x, y in records), grid)


def scene_to_records(scene: Scene) -> List[List]:
    return [[p.spec.color, p.spec.shape, p.x, p.y] for p in scene.placements]
