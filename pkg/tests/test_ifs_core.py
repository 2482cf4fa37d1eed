import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifs_julia.ifs_core import (CapExceeded, ConformalIFS, IFSError, attractor_chaos_game,
                                attractor_disk_cover, attractor_membership,
                                build_separation_plan, hausdorff_distance, ifs_from_dict,
                                ifs_to_dict, invariant_disk, iterate_system, load_ifs,
                                validate_ifs, word_index)
from ifs_julia.plane_geometry import AffineContraction
from oracles import QC, cantor_digit_oracle


def make(*pairs, label=""):
    return ConformalIFS(tuple(AffineContraction(a, b) for a, b in pairs), label)


CANTOR_NINTHS = make((1 / 3, -2 / 9), (1 / 3, 2 / 9))


def test_validate_examples():
    rep = validate_ifs(make((0.5, 0)))
    assert rep.passed and rep.checks[0].fixed_point == 0
    rep = validate_ifs(make((0.5, 0.6)))
    assert not rep.passed and rep.checks[0].total == pytest.approx(1.1)
    assert rep.offending == [0] and "1.1" in rep.summary()
    rep = validate_ifs(make((0.3, 0.2), (0.3, -0.2)))
    assert rep.passed
    fps = [c.fixed_point for c in rep.checks]
    assert fps[0] == pytest.approx(2 / 7) and fps[1] == pytest.approx(-2 / 7)


def test_chaos_game_cantor_digit_oracle():
    cloud = attractor_chaos_game(CANTOR_NINTHS, 20_000, seed=3)
    pts = cloud.points
    assert np.abs(pts.imag).max() == 0
    assert pts.real.min() >= -1 / 3 - 1e-9 and pts.real.max() <= 1 / 3 + 1e-9
    for x in pts[:2000].real:
        assert cantor_digit_oracle(x, -1 / 3, 1 / 3, depth=14, tol=1e-9)


def test_chaos_game_single_map_collapses():
    cloud = attractor_chaos_game(make((0.5, 0)), 1000, burn_in=60)
    assert np.abs(cloud.points).max() < 1e-18


def test_chaos_game_deterministic_and_seed_sensitive():
    a = attractor_chaos_game(CANTOR_NINTHS, 5000, seed=11).points
    b = attractor_chaos_game(CANTOR_NINTHS, 5000, seed=11).points
    c = attractor_chaos_game(CANTOR_NINTHS, 5000, seed=12).points
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_chaos_game_rejects_bad_input():
    with pytest.raises(IFSError):
        attractor_chaos_game(CANTOR_NINTHS, 0)
    with pytest.raises(IFSError):
        attractor_chaos_game(make((0.5, 0.6)), 10)


def test_disk_cover_depths():
    c0 = attractor_disk_cover(CANTOR_NINTHS, 0)
    assert len(c0.centers) == 1 and c0.radii[0] == 1 and c0.centers[0] == 0
    c5 = attractor_disk_cover(CANTOR_NINTHS, 5)
    assert len(c5.centers) == 32
    assert np.allclose(c5.radii, 3.0 ** -5, rtol=1e-14)


def test_disk_cover_cap():
    with pytest.raises(CapExceeded):
        attractor_disk_cover(CANTOR_NINTHS, 30, cap=1 << 20)


def test_cloud_inside_depth8_cover(corpus):
    for name in ("cantor_third", "four_map"):
        ifs = corpus(name)
        cloud = attractor_chaos_game(ifs, 100_000, seed=5)
        cover = attractor_disk_cover(ifs, 8 if len(ifs) == 2 else 6)
        assert cover.contains(cloud.points, inflate=1e-9).all()


def test_iterate_system_examples():
    ifs = make((0.5, 0), (0.5, 0.25))
    assert iterate_system(ifs, 1).maps == ifs.maps
    it = iterate_system(ifs, 2)
    assert [m.a for m in it.maps] == [0.25] * 4
    # phi_1 o phi_1 (z) = 0.5 (0.5 z + 0.25) + 0.25 = 0.25 z + 0.375
    assert [m.b for m in it.maps] == [0, 0.125, 0.25, 0.375]


def test_iterate_system_word_order_matches_exact_composition():
    ifs = make((0.3 + 0.1j, 0.2), (0.4j, -0.3), (0.25, 0.1j))
    it = iterate_system(ifs, 3)
    z = 0.123 - 0.456j
    for n, w in enumerate(np.ndindex(3, 3, 3)):
        assert word_index(w, 3) == n
        exact = QC.from_complex(z)
        for i in reversed(w):
            m = ifs.maps[i]
            exact = QC.from_complex(m.a) * exact + QC.from_complex(m.b)
        assert abs(it.maps[n](z) - complex(exact)) < 1e-15


def test_iterated_cloud_matches_original():
    ifs = make((0.5, 0.25), (0.5, -0.25), (0.4j, 0.1))
    a = attractor_chaos_game(ifs, 100_000, seed=1)
    b = attractor_chaos_game(iterate_system(ifs, 2), 100_000, seed=2)
    assert hausdorff_distance(a, b) < 1e-2


def test_iterate_system_dedupe(corpus):
    it = iterate_system(corpus("four_map"), 2)
    assert len(iterate_system(corpus("four_map"), 2, dedupe=True)) <= len(it)
    dup = make((0.5, 0.25), (0.5, 0.25))
    assert len(iterate_system(dup, 3, dedupe=True)) == 1


def test_separation_plan_symmetric_pair():
    ifs = make((0.5, 0.25), (0.5, -0.25))
    plan = build_separation_plan(ifs, 0.005)
    assert plan.r == pytest.approx(1.0)
    assert plan.N == math.ceil(math.log(0.005) / math.log(0.5)) == 8
    assert plan.d_lower == pytest.approx(0.49)
    assert plan.m == 2 ** 8
    # exhaustive independent recomputation over all 256 words
    A, B = np.abs(plan.iterated.a), plan.iterated.b
    f1, f2 = plan.f_indices
    for j in range(plan.m):
        d = max(abs(B[j] - B[f]) - A[j] - A[f] for f in (f1, f2))
        assert d >= plan.d_lower
    plan9 = build_separation_plan(ifs, 0.009)
    assert plan9.d_lower == pytest.approx(0.482)


def test_separation_plan_errors():
    with pytest.raises(IFSError):
        build_separation_plan(make((0.5, 0.25), (0.5, -0.25)), 0.05)
    with pytest.raises(IFSError):
        build_separation_plan(make((0.5, 0.1), (0.25, 0.15)), 0.005)  # same fixed point 0.2
    with pytest.raises(CapExceeded):
        build_separation_plan(make((0.5, 0.25), (0.5, -0.25), (0.5, 0.25j)), 0.005, cap=100)


def test_hausdorff_examples():
    pts = np.array([0, 0.3j, 1])
    assert hausdorff_distance(pts, pts) == 0
    assert hausdorff_distance(np.array([0]), np.array([0.3])) == pytest.approx(0.3)
    with pytest.raises(IFSError):
        hausdorff_distance(np.array([]), pts)


def test_hausdorff_independent_clouds(corpus):
    ifs = corpus("tri_quarter")
    a = attractor_chaos_game(ifs, 100_000, seed=1)
    b = attractor_chaos_game(ifs, 100_000, seed=2)
    assert hausdorff_distance(a, b) < 5e-3


@settings(max_examples=40, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1), min_size=1, max_size=30),
       st.lists(st.complex_numbers(max_magnitude=1), min_size=1, max_size=30))
def test_hausdorff_brute_force(a, b):
    a, b = np.array(a), np.array(b)
    d = np.abs(a[:, None] - b[None, :])
    want = max(d.min(axis=1).max(), d.min(axis=0).max())
    assert hausdorff_distance(a, b) == pytest.approx(want, abs=1e-12)


def test_invariant_disk_and_membership(corpus):
    ifs = corpus("cantor_third")
    d = invariant_disk(ifs)
    assert d.center == 0 and d.radius == pytest.approx(0.75)
    for m in ifs.maps:
        assert abs(m(d.center) - d.center) + m.scale * d.radius <= d.radius + 1e-15
    xs = np.random.default_rng(4).uniform(-1, 1, 2000)
    got = attractor_membership(ifs, xs, depth=6)
    want = [cantor_digit_oracle(x, -0.75, 0.75, 6) for x in xs]
    assert list(got) == want


def test_ifs_json_round_trip(tmp_path):
    ifs = make((0.3 + 0.1j, -0.2), (0.25j, 0.4), label="demo")
    again = ifs_from_dict(json.loads(json.dumps(ifs_to_dict(ifs))))
    assert again == ifs
    p = tmp_path / "x.json"
    p.write_text(json.dumps(ifs_to_dict(ifs)))
    assert load_ifs(p) == ifs


@pytest.mark.parametrize("bad, msg", [
    ([], "object"),
    ({"maps": 3}, "maps"),
    ({"maps": [{"a_re": "x"}]}, "maps[0].a_re"),
    ({"maps": [{"a_re": 0.5, "zz": 1}]}, "unknown"),
    ({"maps": [{"a_re": 1.5}]}, "maps[0]"),
    ({"maps": [], "extra": 1}, "unknown"),
])
def test_ifs_schema_errors(bad, msg):
    with pytest.raises(IFSError, match=msg.replace("[", r"\[").replace("]", r"\]")):
        ifs_from_dict(bad)


def test_load_ifs_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "maps": [\n  {"a_re": 0.5,}\n ]\n}')
    with pytest.raises(IFSError, match="line 3"):
        load_ifs(p)
