import json

import numpy as np
import pytest

from angionav.raster import (
    AnnotationError,
    BinaryMask,
    GrayImage,
    MaskFormatError,
    PolygonAnnotation,
    image_from_pgm_bytes,
    image_to_pgm_bytes,
    load_mask,
    mask_from_pgm_bytes,
    mask_to_pgm_bytes,
    parse_labelme,
    rasterize_polygons,
    store_mask,
)


def poly(*pts, label="vessel"):
    return PolygonAnnotation(label=label, vertices=tuple(pts))


def even_odd_oracle(vertices, width, height):
    """Independent per-pixel crossing-count oracle at pixel centers."""
    out = np.zeros((height, width), dtype=bool)
    n = len(vertices)
    for r in range(height):
        for c in range(width):
            px, py = c + 0.5, r + 0.5
            inside = False
            for j in range(n):
                x1, y1 = vertices[j]
                x2, y2 = vertices[(j + 1) % n]
                if (y1 <= py) != (y2 <= py):
                    xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                    if px < xi:
                        inside = not inside
            out[r, c] = inside
    return out


class TestRasterize:
    def test_empty_input_all_zero(self):
        mask = rasterize_polygons([], 8, 8)
        assert mask.foreground_count == 0
        assert (mask.width, mask.height) == (8, 8)

    def test_full_cover_rectangle(self):
        full = poly((0, 0), (8, 0), (8, 8), (0, 8))
        mask = rasterize_polygons([full], 8, 8)
        assert mask.foreground_count == 64

    def test_square_matches_point_in_polygon_oracle(self):
        verts = ((2, 2), (5, 2), (5, 5), (2, 5))
        mask = rasterize_polygons([poly(*verts)], 8, 8)
        oracle = even_odd_oracle(verts, 8, 8)
        assert np.array_equal(mask.bits, oracle)
        assert mask.foreground_count == oracle.sum() == 9

    def test_random_polygons_match_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            verts = tuple(
                (float(rng.uniform(0, 16)), float(rng.uniform(0, 16)))
                for _ in range(int(rng.integers(3, 8)))
            )
            mask = rasterize_polygons([poly(*verts)], 16, 16)
            assert np.array_equal(mask.bits, even_odd_oracle(verts, 16, 16))

    def test_too_few_vertices_rejected_with_index(self):
        anns = [poly((0, 0), (4, 0), (4, 4)), poly((1, 1), (2, 2))]
        with pytest.raises(AnnotationError) as err:
            rasterize_polygons(anns, 8, 8)
        assert err.value.index == 1

    def test_translation_consistency(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            verts = tuple(
                (float(rng.uniform(3, 10)), float(rng.uniform(3, 10)))
                for _ in range(5)
            )
            dx, dy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            base = rasterize_polygons([poly(*verts)], 20, 20)
            moved = rasterize_polygons(
                [poly(*((x + dx, y + dy) for x, y in verts))], 20, 20
            )
            assert np.array_equal(np.roll(np.roll(base.bits, dy, 0), dx, 1), moved.bits)


class TestPgm:
    def test_roundtrip_random_masks(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            bits = rng.random((32, 32)) < rng.uniform(0.1, 0.9)
            mask = BinaryMask(bits)
            again = mask_from_pgm_bytes(mask_to_pgm_bytes(mask))
            assert np.array_equal(again.bits, bits)

    def test_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        mask = BinaryMask(rng.random((17, 9)) < 0.5)
        store_mask(mask, tmp_path / "m.pgm")
        assert np.array_equal(load_mask(tmp_path / "m.pgm").bits, mask.bits)

    def test_all_zero_mask_payload(self):
        data = mask_to_pgm_bytes(BinaryMask.zeros(4, 4))
        assert data.startswith(b"P5\n4 4\n255\n")
        assert data[len(b"P5\n4 4\n255\n"):] == b"\x00" * 16

    def test_truncated_payload_is_error(self):
        data = mask_to_pgm_bytes(BinaryMask.zeros(8, 8))[:-5]
        with pytest.raises(MaskFormatError) as err:
            mask_from_pgm_bytes(data)
        assert "truncated" in str(err.value)
        assert err.value.offset == len(data)

    def test_non_binary_value_names_offset(self):
        data = bytearray(mask_to_pgm_bytes(BinaryMask.zeros(4, 4)))
        header = len(b"P5\n4 4\n255\n")
        data[header + 7] = 17
        with pytest.raises(MaskFormatError) as err:
            mask_from_pgm_bytes(bytes(data))
        assert err.value.offset == header + 7

    def test_bad_magic(self):
        with pytest.raises(MaskFormatError) as err:
            mask_from_pgm_bytes(b"P2\n4 4\n255\n" + b"\x00" * 16)
        assert err.value.offset == 0

    def test_comments_in_header(self):
        data = b"P5\n# a comment\n4 2\n255\n" + b"\xff" * 8
        assert mask_from_pgm_bytes(data).foreground_count == 8

    def test_image_roundtrip_quantized(self):
        rng = np.random.default_rng(4)
        img = GrayImage(rng.random((12, 12)))
        again = image_from_pgm_bytes(image_to_pgm_bytes(img))
        assert np.abs(again.values - img.values).max() <= 0.5 / 255 + 1e-12


class TestLabelme:
    def test_empty_shapes(self):
        anns, warnings = parse_labelme(json.dumps({"shapes": []}))
        assert anns == [] and warnings == []

    def test_polygon_mapped(self):
        doc = {"shapes": [{"label": "v", "shape_type": "polygon",
                           "points": [[0, 0], [4, 0], [4, 4], [0, 4]]}]}
        anns, warnings = parse_labelme(json.dumps(doc))
        assert len(anns) == 1 and not warnings
        assert anns[0].label == "v" and len(anns[0].vertices) == 4

    def test_rectangle_shape_warns(self):
        doc = {"shapes": [
            {"label": "v", "shape_type": "polygon", "points": [[0, 0], [4, 0], [2, 4]]},
            {"label": "r", "shape_type": "rectangle", "points": [[0, 0], [4, 4]]},
        ]}
        anns, warnings = parse_labelme(json.dumps(doc))
        assert len(anns) == 1
        assert len(warnings) == 1 and "rectangle" in warnings[0]

    def test_missing_points_names_shape(self):
        doc = {"shapes": [{"label": "v", "shape_type": "polygon"}]}
        with pytest.raises(AnnotationError) as err:
            parse_labelme(json.dumps(doc))
        assert err.value.index == 0

    def test_non_numeric_coordinates(self):
        doc = {"shapes": [{"label": "v", "shape_type": "polygon",
                           "points": [[0, 0], ["x", 1], [2, 2]]}]}
        with pytest.raises(AnnotationError):
            parse_labelme(json.dumps(doc))

    def test_no_shapes_array(self):
        with pytest.raises(ValueError):
            parse_labelme(json.dumps({"version": "5"}))


class TestContainers:
    def test_image_range_enforced(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            GrayImage(np.array([[0.1, np.nan], [0.2, 0.3]]))

    def test_mask_immutable(self):
        mask = BinaryMask.zeros(4, 4)
        with pytest.raises(ValueError):
            mask.bits[0, 0] = True
