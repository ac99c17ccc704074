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
from itertools import combinations, cycle, permutations, product

import numpy as np
import pytest

from sscr.scene import (ALL_SPECS, DuplicateObjectError, Edge, InfeasibleEditError, ObjectSpec, ParsedEdit,
                        Placement, PlacementError, Relation, Scene, apply_edit, detect, glyph_masks,
                        glyph_templates, random_scene, render, scene_graph, write_ppm)

RED_CUBE = ObjectSpec('red', 'cube')
BLUE_SPHERE = ObjectSpec('blue', 'sphere')
GREEN_CYLINDER = ObjectSpec('green', 'cylinder')


@pytest.fixture
def centred():
    return apply_edit(Scene(), ParsedEdit(RED_CUBE, Relation.CENTER))


def test_centre_edit(centred):
    assert centred.placements == (Placement(RED_CUBE, 4, 4),)


@pytest.mark.parametrize('relation,cell', [(Relation.LEFT, (3, 4)), (Relation.RIGHT, (5, 4)),
                                           (Relation.BEHIND, (4, 3)), (Relation.FRONT, (4, 5))])
def test_relative_edit_takes_the_closest_cell(centred, relation, cell):
    scene = apply_edit(centred, ParsedEdit(BLUE_SPHERE, relation, RED_CUBE))
    assert len(scene) == 2
    assert scene.placements[0] == centred.placements[0]
    assert (scene.placements[1].x, scene.placements[1].y) == cell


def test_distance_ties_break_by_row_then_column(centred):
    scene = apply_edit(centred, ParsedEdit(BLUE_SPHERE, Relation.LEFT, RED_CUBE))
    scene = apply_edit(scene, ParsedEdit(GREEN_CYLINDER, Relation.LEFT, RED_CUBE))
    # (3, 4) is taken; (3, 3) and (3, 5) are both at distance √2 and the upper row wins.
    assert scene.find(GREEN_CYLINDER) == Placement(GREEN_CYLINDER, 3, 3)


def test_missing_anchor_is_infeasible(centred):
    with pytest.raises(InfeasibleEditError):
        apply_edit(centred, ParsedEdit(BLUE_SPHERE, Relation.LEFT, GREEN_CYLINDER))


def test_target_already_in_scene(centred):
    with pytest.raises(DuplicateObjectError):
        apply_edit(centred, ParsedEdit(RED_CUBE, Relation.LEFT, RED_CUBE))


def test_occupied_centre(centred):
    with pytest.raises(PlacementError):
        apply_edit(centred, ParsedEdit(BLUE_SPHERE, Relation.CENTER))


def test_no_free_cell_on_the_requested_side():
    scene = Scene((Placement(RED_CUBE, 0, 3),))
    with pytest.raises(PlacementError):
        apply_edit(scene, ParsedEdit(BLUE_SPHERE, Relation.LEFT, RED_CUBE))


def test_scene_validation():
    with pytest.raises(PlacementError):
        Scene((Placement(RED_CUBE, 8, 0),))
    with pytest.raises(PlacementError):
        Scene((Placement(RED_CUBE, 1, 1), Placement(BLUE_SPHERE, 1, 1)))
    with pytest.raises(DuplicateObjectError):
        Scene((Placement(RED_CUBE, 1, 1), Placement(RED_CUBE, 2, 1)))
    with pytest.raises(ValueError):
        ObjectSpec('magenta', 'cube')
    with pytest.raises(ValueError):
        ParsedEdit(RED_CUBE, Relation.LEFT)


def test_scene_equality_ignores_order():
    a, b = Placement(RED_CUBE, 1, 1), Placement(BLUE_SPHERE, 2, 1)
    assert Scene((a, b)) == Scene((b, a))
    assert hash(Scene((a, b))) == hash(Scene((b, a)))
    assert Scene((a,)) != Scene((a, b))


def test_glyphs_are_distinguishable():
    masks = glyph_masks(4)
    assert len({m.tobytes() for m in masks}) == 3
    templates = glyph_templates(4)
    assert templates.shape == (len(ALL_SPECS) + 1, 48)
    assert len({t.tobytes() for t in templates}) == len(templates)
    with pytest.raises(ValueError):
        glyph_masks(3)


def test_detect_inverts_render_on_random_scenes():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        scene = random_scene(rng, int(rng.integers(0, 9)))
        assert detect(render(scene)) == scene


def test_detect_inverts_render_of_every_single_object():
    for spec, x, y in product(ALL_SPECS, range(8), range(8)):
        scene = Scene((Placement(spec, x, y),))
        assert detect(render(scene)) == scene


@pytest.mark.parametrize('n', [2, 3])
def test_detect_inverts_render_of_every_cell_combination(n):
    # Every set of n cells, filled with spec tuples cycling through all ordered choices of distinct specs.
    specs = cycle(permutations(ALL_SPECS, n))
    for cells in combinations(product(range(8), range(8)), n):
        scene = Scene(tuple(Placement(s, x, y) for s, (x, y) in zip(next(specs), cells)))
        assert detect(render(scene)) == scene


def test_dark_images_hold_no_objects():
    assert len(detect(np.full((32, 32, 3), 0.05))) == 0


def test_detection_threshold():
    image = render(Scene((Placement(RED_CUBE, 2, 5),)))
    noisy = image + np.random.default_rng(1).normal(0.0, 0.05, image.shape)
    assert detect(noisy) == Scene((Placement(RED_CUBE, 2, 5),))
    assert len(detect(noisy, max_error=1e-4)) == 0


def test_render_values_and_size():
    image = render(random_scene(np.random.default_rng(2), 5), 64)
    assert image.shape == (64, 64, 3)
    assert image.min() >= 0.0 and image.max() <= 1.0
    with pytest.raises(ValueError):
        render(Scene(), 30)


def test_scene_graph_edges():
    scene = Scene((Placement(RED_CUBE, 1, 1), Placement(BLUE_SPHERE, 3, 2), Placement(GREEN_CYLINDER, 3, 0)))
    g = scene_graph(scene)
    assert g.vertices == (RED_CUBE, BLUE_SPHERE, GREEN_CYLINDER)
    assert Edge(RED_CUBE, BLUE_SPHERE, Relation.LEFT) in g.edges
    assert Edge(BLUE_SPHERE, RED_CUBE, Relation.RIGHT) in g.edges
    assert Edge(RED_CUBE, BLUE_SPHERE, Relation.BEHIND) in g.edges
    assert Edge(GREEN_CYLINDER, BLUE_SPHERE, Relation.BEHIND) in g.edges
    # Blue sphere and green cylinder share a column, so they have no left/right edge.
    assert Edge(GREEN_CYLINDER, BLUE_SPHERE, Relation.LEFT) not in g.edges
    assert len(g.edges) == 10


def test_write_ppm(tmp_path):
    image = render(Scene((Placement(RED_CUBE, 0, 0),)))
    write_ppm(image, tmp_path / 'scene.ppm')
    data = (tmp_path / 'scene.ppm').read_bytes()
    header = b"P6\n32 32\n255\n"
    assert data.startswith(header)
    assert len(data) == len(header) + 32 * 32 * 3
