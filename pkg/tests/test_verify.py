"""Grid oracles, intermediate fibers, quantified local checks and the boundedness probe."""


import pytest
from numpy.testing import assert_allclose

from app.core.config import settings_override
from app.core.exceptions import BudgetExceededError, CapabilityError, InputError
from app.domain.expr import VarSpace
from app.domain.problem import FiberKind, ReformKind
from app.services.reform import build_reformulation
from app.services.verify import (
    Box,
    brute_force_global,
    enumerate_K,
    inner_semicompactness_probe,
    local_min_certificate,
    quantified_local_check,
)

XY = VarSpace.of(("x", 1), ("y", 1))


def _same_points(found, expected):
    key = lambda v: [round(c, 9) + 0.0 for c in v]  # noqa: E731
    return sorted(map(key, found)) == sorted(map(key, expected))


class TestBox:
    def test_symmetric_counts(self):
        box = Box.from_blocks(XY, {"x": 0.0, "y": 1.0}, 1.0, 0.5)
        assert box.counts == (5, 5)
        assert box.size == 25
        assert_allclose(box.axes()[1], [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_radius_not_a_multiple_of_step(self):
        box = Box.from_blocks(XY, {"x": 0.0, "y": 0.0}, 0.25, 0.1)
        assert box.counts == (5, 5)

    def test_per_block_steps(self):
        space = VarSpace.of(("x", 1), ("y", 1), ("u", 2))
        box = Box.around(space, [0.0, 1.0, 0.0, 1.0], 0.1, 1e-3, 0.05)
        assert box.counts == (201, 201, 5, 5)

    def test_missing_block(self):
        with pytest.raises(InputError, match="missing"):
            Box.from_blocks(XY, {"x": 0.0, "y": 0.0}, {"x": 1.0}, 0.1)

    def test_non_positive_step(self):
        with pytest.raises(InputError):
            Box.from_blocks(XY, {"x": 0.0, "y": 0.0}, 1.0, 0.0)


class TestBruteForceGlobal:
    def test_running_example(self, running):
        box = Box.from_blocks(running.space, {"x": 0.0, "y": 0.0}, 2.0, 1e-2)
        report = brute_force_global(running, box)
        assert report.status == "optimal"
        assert report.point["x"][0] == pytest.approx(0.5, abs=1e-9)
        assert report.point["y"][0] == pytest.approx(0.5, abs=1e-9)
        assert report.value == pytest.approx(0.5, abs=1e-9)
        assert report.grid_points == 401 * 401
        assert report.feasible_points == 401

    def test_parallel_scan_agrees(self, running):
        box = Box.from_blocks(running.space, {"x": 0.0, "y": 0.0}, 2.0, 1e-2)
        serial = brute_force_global(running, box)
        with settings_override(grid_chunk=10_000):
            parallel = brute_force_global(running, box, workers=4)
        assert parallel.point == serial.point
        assert parallel.feasible_points == serial.feasible_points

    def test_ld_reformulation_has_the_same_optimum(self, running):
        ref = build_reformulation(running, ReformKind.LD)
        box = Box.from_blocks(ref.space, {"x": 0.0, "y": 0.0, "u": [0.5, 0.5]},
                              {"x": 1.0, "y": 1.0, "u": 0.5}, {"x": 1e-2, "y": 1e-2, "u": 0.5})
        assert brute_force_global(ref, box).value == pytest.approx(0.5, abs=1e-9)

    def test_grid_guard(self, running):
        box = Box.from_blocks(running.space, {"x": 0.0, "y": 0.0}, 2.0, 1e-2)
        with settings_override(max_grid_points=1000), pytest.raises(BudgetExceededError):
            brute_force_global(running, box)

    def test_space_mismatch(self, running):
        ref = build_reformulation(running, ReformKind.KKT)
        box = Box.from_blocks(running.space, {"x": 0.0, "y": 0.0}, 1.0, 0.5)
        with pytest.raises(InputError):
            brute_force_global(ref, box)


class TestLocalMinCertificate:
    def test_bilevel_point_off_the_minimizer(self, running):
        cert = local_min_certificate(running, {"x": 0, "y": 1}, 0.1, 1e-3)
        assert cert.verdict == "counterexample"
        assert cert.drop >= 1e-3
        assert cert.value == pytest.approx(1.0)

    def test_ld_pair(self, running):
        ref = build_reformulation(running, ReformKind.LD)
        local = local_min_certificate(ref, {"x": 0, "y": 1, "u": [0, 1]}, 0.1, 1e-3)
        spurious = local_min_certificate(ref, {"x": 0, "y": 1, "u": [1, 0]}, 0.1, 1e-3)
        assert local.verdict == "no_better_point_at_resolution"
        assert local.witness is None
        assert spurious.verdict == "counterexample"
        assert spurious.drop >= 1e-3
        assert spurious.witness["u"] == pytest.approx([1.0, 0.0])

    def test_infeasible_center(self, running):
        with pytest.raises(InputError, match="infeasible"):
            local_min_certificate(running, {"x": 0, "y": 0.5}, 0.1, 1e-2)


class TestEnumerateK:
    def test_lagrange_fiber(self, running):
        fiber = enumerate_K(running, FiberKind.ELL, [0.0], [1.0])
        assert _same_points(fiber.vertices, [[1.0, 0.0], [0.0, 1.0]])
        assert fiber.bounded
        assert fiber.matches_multiplier_set is True
        assert fiber.labels == ["u[0]", "u[1]"]

    def test_wolfe_fiber_is_free_in_z(self, running):
        fiber = enumerate_K(running, "w", [0.0], [1.0])
        assert _same_points(fiber.vertices, [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        assert len(fiber.lineality) == 1
        assert_allclose([abs(c) for c in fiber.lineality[0]], [1.0, 0.0, 0.0])
        assert not fiber.bounded

    def test_mond_weir_fiber(self, running):
        fiber = enumerate_K(running, FiberKind.MW, [0.0], [1.0])
        assert _same_points(fiber.vertices, [[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        assert fiber.bounded

    def test_single_multiplier_off_the_kink(self, running):
        fiber = enumerate_K(running, FiberKind.ELL, [0.5], [0.5])
        assert _same_points(fiber.vertices, [[1.0, 0.0]])

    def test_lower_level_not_convex(self, cube_root):
        with pytest.raises(InputError, match="convex"):
            enumerate_K(cube_root, FiberKind.ELL, [8.0], [0.0])

    def test_infeasible_y(self, running):
        with pytest.raises(InputError):
            enumerate_K(running, FiberKind.ELL, [0.0], [2.0])


class TestQuantifiedLocalCheck:
    def test_kink_has_a_spurious_multiplier(self, running):
        report = quantified_local_check(running, ReformKind.LD, [0.0], [1.0], 0.1, 1e-3)
        assert report.aggregate == "some_counterexample"
        by_u = {tuple(c.implicit["u"]): c.certificate.verdict for c in report.checks if c.source == "vertex"}
        assert by_u[(0.0, 1.0)] == "no_better_point_at_resolution"
        assert by_u[(1.0, 0.0)] == "counterexample"
        assert any(c.source == "edge_midpoint" for c in report.checks)

    def test_global_minimizer_is_local_for_every_multiplier(self, running):
        report = quantified_local_check(running, "ld", [0.5], [0.5], 0.1, 1e-3)
        assert report.aggregate == "all_local"
        assert len(report.checks) == 1

    def test_lower_slater_restricts_z(self, running):
        report = quantified_local_check(running, ReformKind.WD, [0.0], [1.0], 0.1, 1e-2,
                                        lower_slater=True)
        assert report.lower_slater
        assert report.fiber.bounded
        assert all(c.implicit["z"] == [1.0] for c in report.checks)

    def test_no_fiber_for_vf(self, running):
        with pytest.raises(CapabilityError):
            quantified_local_check(running, ReformKind.VF, [0.0], [1.0])


class TestInnerSemicompactnessProbe:
    def test_running_example_is_bounded(self, running):
        report = inner_semicompactness_probe(running, FiberKind.ELL, [0.0], [1.0])
        assert report.verdict == "bounded_evidence"
        assert report.max_vertex_norm == pytest.approx(1.0)
        assert report.notes[0].startswith("heuristic")

    def test_multipliers_escape(self, isc_synthetic):
        report = inner_semicompactness_probe(isc_synthetic, "ell", [0.0], [1.0])
        assert report.verdict == "unbounded_evidence"
        assert report.max_vertex_norm > report.norm_limit
        assert report.rays_seen
        assert any("skipped" in note for note in report.notes)
