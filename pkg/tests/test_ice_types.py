import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely.geometry import Polygon

from iceseg.ice_types import (IGNORE_VALUE, ChartError, ChartPolygon, IceType,
                              class_frequencies, dominant_ice_type)

SQUARE = Polygon([(0, 0), (100, 0), (100, 100), (0, 100)])

ICE_TYPES = [t for t in IceType if t != IceType.WATER]


def make_polygon(**kwargs):
    return ChartPolygon(geometry=SQUARE, **kwargs)


class TestTaxonomy:
    def test_five_classes_contiguous(self):
        assert [int(t) for t in IceType] == [0, 1, 2, 3, 4]
        assert len({t.name for t in IceType}) == 5

    def test_stage_order_matches_codes(self):
        assert IceType.WATER < IceType.NEW_ICE < IceType.YOUNG_ICE
        assert IceType.YOUNG_ICE < IceType.FIRST_YEAR_ICE < IceType.OLD_ICE


class TestDominantType:
    def test_water_polygon(self):
        assert dominant_ice_type(make_polygon(is_water=True)) == IceType.WATER

    def test_highest_concentration_wins(self):
        p = make_polygon(ct=9, sa=IceType.OLD_ICE, ca=3, sb=IceType.FIRST_YEAR_ICE, cb=6)
        assert dominant_ice_type(p) == IceType.FIRST_YEAR_ICE

    def test_tie_goes_to_older_type(self):
        p = make_polygon(ct=10, sa=IceType.OLD_ICE, ca=5, sb=IceType.FIRST_YEAR_ICE, cb=5)
        assert dominant_ice_type(p) == IceType.OLD_ICE

    def test_single_type_polygon(self):
        p = make_polygon(ct=7, sa=IceType.YOUNG_ICE, ca=7)
        assert dominant_ice_type(p) == IceType.YOUNG_ICE

    def test_single_type_without_concentration(self):
        p = make_polygon(ct=10, sa=IceType.NEW_ICE)
        assert dominant_ice_type(p) == IceType.NEW_ICE

    def test_no_type_not_water_rejected(self):
        p = make_polygon(ct=5)
        with pytest.raises(ChartError):
            dominant_ice_type(p)

    def test_exhaustive_against_argmax_oracle(self):
        # Oracle: argmax of concentration with ties to the higher stage code,
        # spelled out independently of the implementation.
        checked = 0
        for sa, sb in itertools.permutations(ICE_TYPES, 2):
            if sa < sb:
                continue  # charts list the older type first
            for ca, cb in itertools.product(range(1, 11), repeat=2):
                if ca + cb > 10:
                    continue
                if cb > ca:
                    expected = sb
                elif ca > cb:
                    expected = sa
                else:
                    expected = sa if int(sa) > int(sb) else sb
                p = make_polygon(ct=ca + cb, sa=sa, ca=ca, sb=sb, cb=cb)
                assert dominant_ice_type(p) == expected, (sa, ca, sb, cb)
                checked += 1
        assert checked == 6 * sum(1 for a, b in itertools.product(range(1, 11), repeat=2) if a + b <= 10)

    @given(
        sa=st.sampled_from(ICE_TYPES), sb=st.sampled_from(ICE_TYPES),
        ca=st.integers(1, 9), cb=st.integers(1, 9),
    )
    def test_slot_swap_invariance(self, sa, sb, ca, cb):
        if sa == sb or ca + cb > 10:
            return
        p = make_polygon(ct=ca + cb, sa=sa, ca=ca, sb=sb, cb=cb)
        q = make_polygon(ct=ca + cb, sa=sb, ca=cb, sb=sa, cb=ca)
        assert dominant_ice_type(p) == dominant_ice_type(q)
        assert dominant_ice_type(p) in (sa, sb)

    def test_monotonic_in_first_concentration(self):
        # Raising ca never flips the winner from sa's type to sb's type.
        for cb in range(1, 5):
            previous_was_sa = False
            for ca in range(1, 11 - cb):
                p = make_polygon(ct=ca + cb, sa=IceType.OLD_ICE, ca=ca,
                                 sb=IceType.NEW_ICE, cb=cb)
                is_sa = dominant_ice_type(p) == IceType.OLD_ICE
                assert not (previous_was_sa and not is_sa)
                previous_was_sa = is_sa


class TestChartPolygonValidation:
    def test_water_with_attributes_rejected(self):
        with pytest.raises(ChartError):
            make_polygon(is_water=True, sa=IceType.OLD_ICE, ca=5)

    def test_fractional_concentration_rejected(self):
        with pytest.raises(ChartError):
            make_polygon(ct=5, sa=IceType.OLD_ICE, ca=4.5)

    def test_integral_float_accepted(self):
        assert make_polygon(ct=5, sa=IceType.OLD_ICE, ca=5.0).ca == 5

    def test_concentration_out_of_range(self):
        with pytest.raises(ChartError):
            make_polygon(ct=11, sa=IceType.OLD_ICE, ca=11)
        with pytest.raises(ChartError):
            make_polygon(ct=0, sa=IceType.OLD_ICE, ca=0)

    def test_partials_exceeding_total_rejected(self):
        with pytest.raises(ChartError):
            make_polygon(ct=10, sa=IceType.OLD_ICE, ca=8, sb=IceType.NEW_ICE, cb=8)

    def test_degenerate_geometry_rejected(self):
        line = Polygon([(0, 0), (1, 0), (2, 0)])
        with pytest.raises(ChartError):
            ChartPolygon(geometry=line, ct=5, sa=IceType.OLD_ICE, ca=5)

    def test_self_intersecting_rejected(self):
        bowtie = Polygon([(0, 0), (2, 2), (2, 0), (0, 2)])
        with pytest.raises(ChartError):
            ChartPolygon(geometry=bowtie, ct=5, sa=IceType.OLD_ICE, ca=5)

    def test_second_slot_only_normalized(self):
        p = make_polygon(ct=6, sb=IceType.YOUNG_ICE, cb=6)
        assert p.sa == IceType.YOUNG_ICE and p.ca == 6 and p.sb is None


class TestClassFrequencies:
    def test_all_ignore_is_empty(self):
        codes = np.full((8, 8), IGNORE_VALUE, dtype=np.uint8)
        assert class_frequencies(codes) == {}

    def test_small_known_raster(self):
        codes = np.array([[0, 0], [4, IGNORE_VALUE]], dtype=np.uint8)
        assert class_frequencies(codes) == {IceType.WATER: 2, IceType.OLD_ICE: 1}

    def test_matches_loop_oracle(self, rng):
        codes = rng.choice([0, 1, 2, 3, 4, IGNORE_VALUE], size=(16, 16)).astype(np.uint8)
        expected = {}
        for value in codes.ravel():
            if value == IGNORE_VALUE:
                continue
            key = IceType(int(value))
            expected[key] = expected.get(key, 0) + 1
        assert class_frequencies(codes) == expected

    def test_counts_sum_to_valid_pixels(self, rng):
        codes = rng.choice([1, 3, IGNORE_VALUE], size=(32, 32)).astype(np.uint8)
        counts = class_frequencies(codes)
        assert sum(counts.values()) == int((codes != IGNORE_VALUE).sum())

    def test_invalid_code_rejected(self):
        with pytest.raises(ValueError):
            class_frequencies(np.array([[0, 9]], dtype=np.uint8))
