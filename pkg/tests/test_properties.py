import time

import pytest

from distequiv.properties import MUTATIONS, registry, run_property_suite


def test_registry_covers_every_module():
    modules = {module for _, module, _, _ in registry()}
    assert modules >= {"core", "distdp", "sketch", "risk", "planning", "model_learn", "envs", "experiment"}
    for name, _, basis, _ in registry():
        assert basis, name


def test_fast_profile_passes_quickly():
    t0 = time.perf_counter()
    report = run_property_suite("fast")
    elapsed = time.perf_counter() - t0
    for r in report.results:
        print(r.line())
    assert report.all_passed, [r.line() for r in report.failed()]
    assert elapsed < 60


@pytest.mark.parametrize(
    "mutation, expected",
    [
        ("projection_no_clip", {"projection_mass_mean", "backup_mass"}),
        ("verbatim_second_moment", {"bellman_closed"}),
    ],
)
def test_mutations_are_detected(mutation, expected):
    report = run_property_suite("fast", mutation)
    failed = {r.name for r in report.failed()}
    assert expected <= failed


def test_bad_arguments():
    with pytest.raises(ValueError):
        run_property_suite("huge")
    with pytest.raises(ValueError):
        run_property_suite("fast", "nope")
    assert set(MUTATIONS) == {"projection_no_clip", "verbatim_second_moment"}
