import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from losfield.geodata import (BaseStation, BuildingFootprint, GridSpec, ParseError, Raster, SynthCitySpec,
                              bilinear_sample, build_surface, footprints_to_geojson, load_buildings_geojson,
                              load_stations, parse_ascii_grid, rasterize_footprints, synth_city, synth_city_layout,
                              write_ascii_grid, write_stations)


def square(x0, y0, side, height):
    ring = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
    return BuildingFootprint((ring,), height)


class TestGridSpec:
    def test_centers(self):
        spec = GridSpec(10.0, 20.0, 2.0, 3, 2)
        np.testing.assert_allclose(spec.centers_x(), [11, 13, 15])
        np.testing.assert_allclose(spec.centers_y(), [21, 23])
        assert spec.shape == (2, 3)

    @pytest.mark.parametrize("kwargs", [dict(cell_size=0), dict(n_cols=0), dict(n_rows=0)])
    def test_invalid(self, kwargs):
        base = dict(origin_x=0, origin_y=0, cell_size=1, n_cols=1, n_rows=1)
        base.update(kwargs)
        with pytest.raises(ValueError):
            GridSpec(**base)


class TestAsciiGrid:
    HEADER = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n"

    def test_row_order_south_first(self):
        r = parse_ascii_grid(self.HEADER + "1 2\n3 4\n")
        np.testing.assert_array_equal(r.values, [[3, 4], [1, 2]])

    def test_nodata_flagged(self):
        r = parse_ascii_grid(self.HEADER + "NODATA_value -9999\n1 -9999\n3 4\n")
        assert r.nodata_mask.sum() == 1
        assert r.nodata_mask[1, 1]

    def test_count_mismatch(self):
        with pytest.raises(ParseError, match="expected 4 values"):
            parse_ascii_grid(self.HEADER + "1 2\n3\n")

    def test_bad_token_names_line(self):
        with pytest.raises(ParseError) as err:
            parse_ascii_grid(self.HEADER + "1 2\n3 x\n")
        assert err.value.line == 7

    def test_malformed_header(self):
        with pytest.raises(ParseError, match="header"):
            parse_ascii_grid("ncols 2\nnrows two\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n")

    def test_missing_key(self):
        with pytest.raises(ParseError, match="cellsize"):
            parse_ascii_grid("ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\n5\n")

    def test_xllcenter(self):
        r = parse_ascii_grid("ncols 1\nnrows 1\nxllcenter 5\nyllcenter 5\ncellsize 10\n7\n")
        assert (r.spec.origin_x, r.spec.origin_y) == (0.0, 0.0)

    def test_sentinel_avoids_valid_data(self):
        raster = Raster(GridSpec(0, 0, 1, 3, 1), np.array([[-9999.0, np.nan, -99999.0]]))
        text = write_ascii_grid(raster)
        assert "NODATA_value -999999\n" in text
        np.testing.assert_array_equal(parse_ascii_grid(text).values, raster.values)

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=6, max_size=6),
           st.sampled_from([None, 2, 5]))
    def test_round_trip(self, values, nodata_at):
        grid = np.array(values).reshape(2, 3)
        if nodata_at is not None:
            grid[np.unravel_index(nodata_at, grid.shape)] = np.nan
        raster = Raster(GridSpec(0.5, -3.25, 0.1, 3, 2), grid)
        back = parse_ascii_grid(write_ascii_grid(raster))
        assert back.spec == raster.spec
        np.testing.assert_array_equal(back.values, raster.values)


class TestRasterize:
    SPEC = GridSpec(0.0, 0.0, 2.0, 20, 20)

    def test_inside_square(self):
        out = rasterize_footprints([square(10, 10, 20, 15.0)], self.SPEC).values
        assert out[self.SPEC.cell_of(20, 20)] == 15.0
        assert out[self.SPEC.cell_of(5, 5)] == 0.0
        # 10 pixel centres per side fall inside the 20 m square
        assert np.count_nonzero(out) == 100

    def test_overlap_takes_max(self):
        out = rasterize_footprints([square(0, 0, 20, 10.0), square(10, 10, 20, 30.0)], self.SPEC).values
        assert out[self.SPEC.cell_of(15, 15)] == 30.0
        assert out[self.SPEC.cell_of(5, 5)] == 10.0

    def test_hole_is_empty(self):
        outer = np.array([[0, 0], [30, 0], [30, 30], [0, 30]], float)
        hole = np.array([[10, 10], [20, 10], [20, 20], [10, 20]], float)
        out = rasterize_footprints([BuildingFootprint((outer, hole), 8.0)], self.SPEC).values
        assert out[self.SPEC.cell_of(15, 15)] == 0.0
        assert out[self.SPEC.cell_of(5, 15)] == 8.0

    def test_degenerate_rejected_with_index(self):
        line = BuildingFootprint((np.array([[0, 0], [1, 1], [0, 0]], float),), 5.0)
        with pytest.raises(ValueError, match="footprint 1"):
            rasterize_footprints([square(0, 0, 4, 1.0), line], self.SPEC)

    @given(st.floats(1, 25), st.floats(1, 25), st.floats(4, 12), st.floats(0, 50))
    def test_interior_pixel_gets_height(self, x0, y0, side, h):
        out = rasterize_footprints([square(x0, y0, side, h)], self.SPEC).values
        cx, cy = self.SPEC.centers_x(), self.SPEC.centers_y()
        inside = ((cx[None, :] > x0) & (cx[None, :] < x0 + side) & (cy[:, None] > y0) & (cy[:, None] < y0 + side))
        outside = ((cx[None, :] < x0) | (cx[None, :] > x0 + side) | (cy[:, None] < y0) | (cy[:, None] > y0 + side))
        np.testing.assert_array_equal(out[inside], h)
        assert np.all(out[outside] == 0)


class TestBuildSurface:
    def test_flat_plus_building(self):
        dem = Raster(GridSpec(0, 0, 10, 4, 4), np.full((4, 4), 100.0))
        surf = build_surface(dem, [square(10, 10, 10, 30.0)], 2.0)
        assert surf.spec.shape == (20, 20)
        np.testing.assert_allclose(surf.ground, 100.0)
        assert surf.surface[surf.spec.cell_of(15, 15)] == 130.0
        assert surf.surface[surf.spec.cell_of(35, 35)] == 100.0

    def test_no_buildings_identity(self):
        dem = Raster(GridSpec(0, 0, 10, 3, 3), np.arange(9.0).reshape(3, 3))
        surf = build_surface(dem, [], 2.0)
        np.testing.assert_array_equal(surf.surface, surf.ground)

    def test_bilinear_midpoint_of_slope(self):
        # slope 1 m per metre in x; midpoint between the first two centres
        dem = Raster(GridSpec(0, 0, 10, 3, 1), np.array([[5.0, 15.0, 25.0]]))
        assert float(bilinear_sample(dem.values, dem.spec, 10.0, 5.0)) == pytest.approx(10.0)

    def test_clipped_buildings_ignored(self):
        dem = Raster(GridSpec(0, 0, 10, 2, 2), np.zeros((2, 2)))
        surf = build_surface(dem, [square(500, 500, 10, 20.0)], 2.0)
        assert surf.surface.max() == 0

    def test_empty_dem(self):
        with pytest.raises(ValueError, match="empty"):
            build_surface(Raster(GridSpec(0, 0, 1, 1, 1), np.array([[np.nan]])), [], 1.0)

    @given(st.floats(0, 30), st.floats(0, 30), st.floats(2, 15), st.floats(0, 40))
    def test_adding_footprint_is_monotone(self, x0, y0, side, h):
        dem = Raster(GridSpec(0, 0, 10, 5, 5), np.linspace(0, 24, 25).reshape(5, 5))
        base = [square(5, 5, 10, 12.0)]
        a = build_surface(dem, base, 2.0).surface
        b = build_surface(dem, base + [square(x0, y0, side, h)], 2.0).surface
        assert np.all(b >= a)


class TestVectorInputs:
    def test_geojson_round_trip(self):
        fps = [square(0, 0, 10, 12.5), square(20, 5, 4, 3.0)]
        back = load_buildings_geojson(json.dumps(footprints_to_geojson(fps)))
        assert [f.height_m for f in back] == [12.5, 3.0]
        np.testing.assert_array_equal(back[0].polygon[0][:4], fps[0].polygon[0])

    def test_multipolygon_and_custom_property(self):
        doc = {"type": "FeatureCollection", "features": [{
            "type": "Feature", "properties": {"h": 7},
            "geometry": {"type": "MultiPolygon", "coordinates": [
                [[[0, 0], [1, 0], [1, 1], [0, 0]]], [[[5, 5], [6, 5], [6, 6], [5, 5]]]]}}]}
        assert len(load_buildings_geojson(json.dumps(doc), height_property="h")) == 2

    def test_missing_height(self):
        doc = {"type": "FeatureCollection", "features": [{
            "type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1]]]}}]}
        with pytest.raises(ParseError, match="height"):
            load_buildings_geojson(json.dumps(doc))

    def test_stations(self):
        text = "station_id,x_m,y_m,antenna_height_m\ns1,100,200,30\ns2,1.5,2.5,10\n"
        st_ = load_stations(io.StringIO(text))
        assert st_[0] == BaseStation("s1", 100.0, 200.0, 30.0)
        assert [s.id for s in st_] == ["s1", "s2"]
        assert load_stations(write_stations(st_)) == st_

    def test_station_zero_height_names_line(self):
        with pytest.raises(ParseError) as err:
            load_stations("station_id,x_m,y_m,antenna_height_m\ns1,1,2,30\ns2,1,2,0\n")
        assert err.value.line == 3

    def test_station_missing_column(self):
        with pytest.raises(ParseError, match="antenna_height_m"):
            load_stations("station_id,x_m,y_m\ns1,1,2\n")

    def test_empty_body(self):
        assert load_stations("station_id,x_m,y_m,antenna_height_m\n") == []


class TestSynthCity:
    def test_open_city_has_no_buildings(self):
        _, fps, _ = synth_city_layout(SynthCitySpec(extent_m=400, open_area_fraction=1.0))
        assert fps == []

    def test_deterministic(self):
        spec = SynthCitySpec(extent_m=300, seed=4)
        a, _ = synth_city(spec)
        b, _ = synth_city(spec)
        np.testing.assert_array_equal(a.surface, b.surface)

    def test_zero_spread_heights(self):
        _, fps, _ = synth_city_layout(SynthCitySpec(extent_m=400, stdev_height_m=0.0, mean_height_m=20.0))
        assert {f.height_m for f in fps} == {20.0}

    def test_coverage_close_to_block_share(self):
        spec = SynthCitySpec(extent_m=800)
        surf, _ = synth_city(spec)
        coverage = np.mean(surf.surface > surf.ground)
        assert coverage >= (60 / 80) ** 2 - 0.05

    def test_extent_smaller_than_block(self):
        with pytest.raises(ValueError, match="smaller than one block"):
            SynthCitySpec(extent_m=50)

    def test_default_station_at_center(self):
        _, stations = synth_city(SynthCitySpec(extent_m=400))
        assert (stations[0].x, stations[0].y) == (200.0, 200.0)
