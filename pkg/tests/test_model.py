from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locforge.errors import (
    InvertedBoxError,
    NonIntegerGridCoordinateError,
    OutOfBoundsError,
)
from locforge.model import (
    AnnotatedImage,
    Box,
    ConversationRecord,
    NormalizedGrid,
    RegionAnnotation,
    Role,
    TaskKind,
    TaskSample,
    Turn,
    conversation_from_row,
    conversation_to_row,
    from_grid,
    image_from_row,
    image_to_row,
    region_from_row,
    region_rows,
    sample_from_row,
    sample_to_row,
    to_grid,
    validate_box,
)

from oracles import oracle_to_grid


class TestValidateBox:
    def test_interior_box_ok(self):
        b = Box(0, 0, 10, 10)
        assert validate_box(b, 100, 100) is b

    def test_inverted(self):
        with pytest.raises(InvertedBoxError):
            validate_box(Box(10, 10, 5, 20), 100, 100)

    def test_exceeds_width(self):
        with pytest.raises(OutOfBoundsError):
            validate_box(Box(0, 0, 101, 50), 100, 100)

    def test_negative_origin(self):
        with pytest.raises(OutOfBoundsError):
            validate_box(Box(-1, 0, 10, 10), 100, 100)

    def test_grid_non_integer(self):
        with pytest.raises(NonIntegerGridCoordinateError):
            validate_box(Box(0, 0, 10.5, 10, NormalizedGrid(1000)), 100, 100)

    def test_grid_out_of_range(self):
        with pytest.raises(OutOfBoundsError):
            validate_box(Box(0, 0, 1001, 10, NormalizedGrid(1000)), 100, 100)

    def test_exhaustive_small_grid(self):
        # acceptance of exactly the invariant-defined set, on an 8x8 image
        # with integer coordinates in [-1, 9]
        for x1 in range(-1, 10):
            for x2 in range(-1, 10):
                for y1 in range(-1, 10):
                    b = Box(x1, y1, x2, 4)
                    expect_ok = (
                        x1 <= x2
                        and y1 <= 4
                        and x1 >= 0
                        and y1 >= 0
                        and x2 <= 8
                    )
                    ok = True
                    try:
                        validate_box(b, 8, 8)
                    except (InvertedBoxError, OutOfBoundsError):
                        ok = False
                    assert ok == expect_ok, (x1, y1, x2)


class TestToGrid:
    def test_full_frame(self):
        g = to_grid(Box(0, 0, 100, 100), 100, 100, 1000)
        assert g.coords() == (0, 0, 1000, 1000)

    def test_hand_scaled(self):
        g = to_grid(Box(25, 25, 75, 75), 100, 100, 1000)
        assert g.coords() == (250, 250, 750, 750)

    def test_matches_oracle_on_spec_case(self):
        # sub-cell width on the x axis expands to one grid cell
        expected = oracle_to_grid([10, 10, 10.04, 20], 100, 100, 1000)
        assert expected == [100, 100, 101, 200]
        g = to_grid(Box(10, 10, 10.04, 20), 100, 100, 1000)
        assert list(g.coords()) == expected

    def test_wider_than_cell_is_not_degenerate(self):
        expected = oracle_to_grid([10, 10, 10.4, 20], 100, 100, 1000)
        g = to_grid(Box(10, 10, 10.4, 20), 100, 100, 1000)
        assert list(g.coords()) == expected == [100, 100, 104, 200]

    def test_degenerate_at_top_edge_shifts_down(self):
        g = to_grid(Box(99.99, 0, 100, 50), 100, 100, 1000)
        assert (g.x1, g.x2) == (999, 1000)

    def test_matches_oracle_randomized(self):
        rng = random.Random(7)
        for _ in range(2000):
            w = rng.choice([13, 100, 640, 1022])
            h = rng.choice([7, 100, 480])
            x1 = rng.uniform(0, w)
            x2 = rng.uniform(x1, w)
            y1 = rng.uniform(0, h)
            y2 = rng.uniform(y1, h)
            bins = rng.choice([10, 100, 1000])
            got = to_grid(Box(x1, y1, x2, y2), w, h, bins)
            assert list(got.coords()) == oracle_to_grid([x1, y1, x2, y2], w, h, bins)
            validate_box(got, w, h)


class TestFromGrid:
    def test_full_frame(self):
        b = from_grid(Box(0, 0, 1000, 1000, NormalizedGrid(1000)), 640, 480)
        assert b.coords() == (0, 0, 640, 480)

    def test_zero_area_rejected_upstream(self):
        with pytest.raises(OutOfBoundsError):
            validate_box(Box(500, 500, 1500, 500, NormalizedGrid(1000)), 100, 100)

    def test_inverse_of_to_grid_example(self):
        b = from_grid(Box(250, 250, 750, 750, NormalizedGrid(1000)), 100, 100)
        assert b.coords() == (25.0, 25.0, 75.0, 75.0)


@st.composite
def abs_boxes(draw):
    w = draw(st.integers(min_value=2, max_value=2000))
    h = draw(st.integers(min_value=2, max_value=2000))
    x1 = draw(st.floats(min_value=0, max_value=w, allow_nan=False))
    x2 = draw(st.floats(min_value=x1, max_value=w, allow_nan=False))
    y1 = draw(st.floats(min_value=0, max_value=h, allow_nan=False))
    y2 = draw(st.floats(min_value=y1, max_value=h, allow_nan=False))
    return Box(x1, y1, x2, y2), w, h


@given(abs_boxes(), st.integers(min_value=2, max_value=2000))
@settings(max_examples=300)
def test_round_trip_within_one_cell(box_wh, bins):
    box, w, h = box_wh
    back = from_grid(to_grid(box, w, h, bins), w, h)
    cell_x = w / bins
    cell_y = h / bins
    assert abs(back.x1 - box.x1) <= cell_x + 1e-9
    assert abs(back.x2 - box.x2) <= cell_x + 1e-9
    assert abs(back.y1 - box.y1) <= cell_y + 1e-9
    assert abs(back.y2 - box.y2) <= cell_y + 1e-9


@given(abs_boxes(), st.integers(min_value=2, max_value=500))
@settings(max_examples=300)
def test_to_grid_monotone_up_to_one_cell(box_wh, bins):
    # containment is preserved up to the one-cell degeneracy expansion
    inner, w, h = box_wh
    outer = Box(
        max(0.0, inner.x1 - 1),
        max(0.0, inner.y1 - 1),
        min(float(w), inner.x2 + 1),
        min(float(h), inner.y2 + 1),
    )
    gi = to_grid(inner, w, h, bins)
    go = to_grid(outer, w, h, bins)
    assert go.x1 <= gi.x1 + 1
    assert go.y1 <= gi.y1 + 1
    assert go.x2 >= gi.x2 - 1
    assert go.y2 >= gi.y2 - 1


class TestTaskSampleInvariants:
    def test_language_only_rejects_image(self):
        with pytest.raises(ValueError):
            TaskSample("s", TaskKind.LANGUAGE_ONLY, "img", {"turns": []})

    def test_image_kind_requires_image(self):
        with pytest.raises(ValueError):
            TaskSample("s", TaskKind.REC, None, {"expression": "x", "bbox": [0, 0, 1, 1]})

    def test_duplicate_labels_rejected(self):
        payload = {
            "entries": [
                {"label": "dog", "bboxes": [[0, 0, 1, 1]]},
                {"label": "dog", "bboxes": [[2, 2, 3, 3]]},
            ]
        }
        with pytest.raises(ValueError):
            TaskSample("s", TaskKind.DETECTION, "img", payload)

    def test_grounding_caps_at_ten_categories(self):
        payload = {
            "entries": [{"label": f"l{i}", "bboxes": []} for i in range(11)]
        }
        with pytest.raises(ValueError):
            TaskSample("s", TaskKind.GROUNDING, "img", payload)
        TaskSample(
            "s",
            TaskKind.GROUNDING,
            "img",
            {"entries": [{"label": f"l{i}", "bboxes": []} for i in range(10)]},
        )


class TestConversationInvariants:
    def test_turns_alternate_starting_with_user(self):
        with pytest.raises(ValueError):
            ConversationRecord("s", None, (Turn(Role.ASSISTANT, "hi"),))
        with pytest.raises(ValueError):
            ConversationRecord(
                "s", None, (Turn(Role.USER, "a"), Turn(Role.USER, "b"))
            )

    def test_assistant_bracket_groups_must_be_boxes(self):
        with pytest.raises(ValueError):
            ConversationRecord(
                "s",
                "img",
                (Turn(Role.USER, "q"), Turn(Role.ASSISTANT, "dog-[9, 9, 3, 9]")),
            )
        # 3-element groups are not coordinate quadruples and pass through
        ConversationRecord(
            "s",
            "img",
            (Turn(Role.USER, "q"), Turn(Role.ASSISTANT, "list [1, 2, 3] ok")),
        )

    def test_user_text_is_unconstrained(self):
        ConversationRecord(
            "s", "img", (Turn(Role.USER, "is it at [9, 9, 3, 9]?"),)
        )


class TestRowCodecs:
    def test_image_round_trip(self):
        img = AnnotatedImage("src/1", 640, 480, "x.jpg")
        assert image_from_row(image_to_row(img)) == img

    def test_region_rows_round_trip_and_negatives(self):
        img = AnnotatedImage(
            "src/1",
            100,
            100,
            regions=(
                RegionAnnotation(Box(1, 2, 3, 4), "a cat", category="cat", source="s"),
            ),
            negatives=("the dog",),
        )
        rows = list(region_rows(img))
        assert len(rows) == 2
        assert rows[0]["bbox"] == [1, 2, 3, 4]
        assert rows[1]["bbox"] is None
        back = region_from_row(rows[0])
        assert back.expression == "a cat"
        assert back.box == Box(1, 2, 3, 4)

    def test_sample_round_trip(self):
        s = TaskSample("id", TaskKind.CAPTION, "img", {"text": "hello"})
        assert sample_from_row(sample_to_row(s)) == s

    def test_conversation_round_trip(self):
        rec = ConversationRecord(
            "id", "img", (Turn(Role.USER, "q"), Turn(Role.ASSISTANT, "a"))
        )
        back = conversation_from_row(conversation_to_row(rec))
        assert back.turns == rec.turns
        assert back.sample_id == rec.sample_id

    def test_region_expression_must_be_nonempty(self):
        with pytest.raises(ValueError):
            RegionAnnotation(Box(0, 0, 1, 1), "   ")
