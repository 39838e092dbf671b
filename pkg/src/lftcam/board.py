"""Checkerboard target description and texture synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry


@dataclass(frozen=True)
class BoardSpec:
    """Planar checkerboard with ``rows`` x ``cols`` inner corners.

    The board frame is centred on the board, z = 0 on its plane; a square is
    ``square_mm`` on a side, so the full board is (rows+1) x (cols+1) squares.
    """

    rows: int
    cols: int
    square_mm: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2 or self.square_mm <= 0:
            raise DegenerateGeometry("board needs >=2x2 corners and positive square")

    @property
    def extent_mm(self) -> tuple:
        """(height, width) of the full board in mm (first axis = rows axis)."""
        return ((self.rows + 1) * self.square_mm, (self.cols + 1) * self.square_mm)

    def corner_points(self) -> np.ndarray:
        """Inner corners, row-major, shape (rows*cols, 3), board frame (mm)."""
        h, w = self.extent_mm
        r = np.arange(1, self.rows + 1) * self.square_mm - h / 2.0
        c = np.arange(1, self.cols + 1) * self.square_mm - w / 2.0
        rr, cc = np.meshgrid(r, c, indexing="ij")
        pts = np.zeros((self.rows * self.cols, 3))
        pts[:, 0] = rr.ravel()
        pts[:, 1] = cc.ravel()
        return pts


def make_checkerboard_texture(rows: int, cols: int, square_px: int = 64) -> np.ndarray:
    """uint8 raster of a board with ``rows`` x ``cols`` inner corners.

    Output is (rows+1)*square_px x (cols+1)*square_px — one block per board
    square.  The top-left square is dark: pixel (0, 0) has value 0.
    """
    if rows < 1 or cols < 1 or square_px < 1:
        raise DegenerateGeometry("rows, cols and square_px must be >= 1")
    blocks = np.add.outer(np.arange(rows + 1), np.arange(cols + 1)) % 2
    ones = np.ones((square_px, square_px), dtype=np.uint8)
    return np.kron(blocks.astype(np.uint8) * 255, ones)
