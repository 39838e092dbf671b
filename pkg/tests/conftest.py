"""Shared fixtures: a small end-to-end scene plus the acceptance recorder.

The small scene (400x400 sensor, 20x20 micro-lenses, 3x3-corner board) is
the cheapest configuration in which every pipeline stage is exercised for
real: each corner is seen by a 4x4 block of micro-lenses and the nine corner
clusters stay several lens pitches apart.
"""

from __future__ import annotations

import contextlib

import pytest

from lftcam.board import BoardSpec
from lftcam.features import detect_features
from lftcam.geometry import (
    CameraModel,
    Distortion,
    MainLensIntrinsics,
    MlaGeometry,
    Pose,
)
from lftcam.simulate import Target, render_raw


@pytest.fixture(scope="session")
def small_camera() -> CameraModel:
    return CameraModel(
        MainLensIntrinsics(50.0, 200.0, 200.0, 0.01, 0.01),
        Distortion(),
        MlaGeometry(58.0, 57.0, 20, 20, 400, 400),
    )


@pytest.fixture(scope="session")
def small_board() -> BoardSpec:
    return BoardSpec(3, 3, 4.5)


@pytest.fixture(scope="session")
def small_pose() -> Pose:
    # Depth chosen so alpha ~ 0.75: corners project into 4x4 lens blocks and
    # adjacent corner clusters stay ~5 lens pitches apart.
    return Pose.identity((0.0, 0.0, 277.3))


@pytest.fixture(scope="session")
def small_image(small_camera, small_board, small_pose):
    return render_raw(small_camera, Target(small_board, small_pose))


@pytest.fixture(scope="session")
def small_features(small_camera, small_image):
    return detect_features(small_image, small_camera.mla)


# ---------------------------------------------------------------------------
# acceptance-criteria recorder
# ---------------------------------------------------------------------------


class CriterionRecord:
    """Collects sub-check outcomes for one acceptance criterion."""

    def __init__(self, label: str):
        self.label = label
        self.failed: list = []
        self.passed: list = []

    def require(self, ok: bool, what: str) -> None:
        (self.passed if ok else self.failed).append(what)

    def note(self, what: str) -> None:
        self.passed.append(what)

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def detail(self) -> str:
        return "; ".join(self.failed if self.failed else self.passed)


_CRITERIA: list = []


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line for the run summary."""

    @contextlib.contextmanager
    def run(label: str):
        rec = CriterionRecord(label)
        try:
            yield rec
        except Exception as exc:
            _CRITERIA.append((label, False, f"{type(exc).__name__}: {exc}"))
            raise
        _CRITERIA.append((label, rec.ok, rec.detail))
        assert rec.ok, f"{label} -- {rec.detail}"

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _CRITERIA:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
