"""sRGB <-> CIE Lab (D65) conversion and Lab grid binning.

The grid has 8 lightness levels of width 12.5 over [0, 100] and 10-unit
a/b cells over [-110, 110]^2. Only cells reachable from some 8-bit sRGB
color are kept; bin indices enumerate those cells in ascending cell order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import OutOfGamut

# IEC 61966-2-1 linear sRGB -> XYZ
_M = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_M_INV = np.linalg.inv(_M)
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

L_LEVELS = 8
L_WIDTH = 12.5
AB_MIN, AB_MAX, AB_WIDTH = -110.0, 110.0, 10.0
AB_CELLS = int((AB_MAX - AB_MIN) / AB_WIDTH)  # 22


def _f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def srgb_to_lab(rgb) -> np.ndarray:
    """Convert 8-bit sRGB (..., 3) to Lab (..., 3)."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _M.T / WHITE_D65
    fx, fy, fz = (_f(xyz[..., k]) for k in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_srgb_linear(lab) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65
    return xyz @ _M_INV.T


def lab_to_srgb(lab) -> np.ndarray:
    """Convert Lab (..., 3) to 8-bit sRGB, clipping out-of-gamut values."""
    lin = np.clip(lab_to_srgb_linear(lab), 0.0, 1.0)
    c = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1 / 2.4) - 0.055)
    return np.clip(np.rint(c * 255.0), 0, 255).astype(np.int64)


def lab_cell(lab) -> np.ndarray:
    """Flat grid-cell id of Lab values; -1 where outside the grid range."""
    lab = np.asarray(lab, dtype=np.float64)
    L, a, b = lab[..., 0], lab[..., 1], lab[..., 2]
    ok = (L >= 0) & (L <= 100) & (a >= AB_MIN) & (a <= AB_MAX) & (b >= AB_MIN) & (b <= AB_MAX)
    li = np.clip(np.floor(L / L_WIDTH), 0, L_LEVELS - 1).astype(np.int64)
    ai = np.clip(np.floor((a - AB_MIN) / AB_WIDTH), 0, AB_CELLS - 1).astype(np.int64)
    bi = np.clip(np.floor((b - AB_MIN) / AB_WIDTH), 0, AB_CELLS - 1).astype(np.int64)
    return np.where(ok, (li * AB_CELLS + ai) * AB_CELLS + bi, -1)


@lru_cache(maxsize=1)
def _in_gamut_cells() -> np.ndarray:
    seen = np.zeros(L_LEVELS * AB_CELLS * AB_CELLS, dtype=bool)
    gb = np.stack(np.meshgrid(np.arange(256), np.arange(256), indexing="ij"), -1).reshape(-1, 2)
    for r in range(256):
        rgb = np.concatenate([np.full((gb.shape[0], 1), r), gb], axis=1)
        seen[lab_cell(srgb_to_lab(rgb))] = True
    cells = np.flatnonzero(seen)
    cells.setflags(write=False)
    return cells


@dataclass(frozen=True)
class LabBinning:
    in_gamut_bins: np.ndarray

    @classmethod
    def default(cls) -> "LabBinning":
        return cls(_in_gamut_cells())

    @property
    def n_bins(self) -> int:
        return len(self.in_gamut_bins)

    def quantize(self, lab) -> np.ndarray:
        cell = lab_cell(lab)
        pos = np.searchsorted(self.in_gamut_bins, cell)
        pos_c = np.minimum(pos, self.n_bins - 1)
        hit = (cell >= 0) & (self.in_gamut_bins[pos_c] == cell)
        if not np.all(hit):
            raise OutOfGamut(f"Lab value(s) outside the sRGB-reachable grid: {np.asarray(lab)[~hit]}")
        return pos_c

    def dequantize(self, index) -> np.ndarray:
        cell = self.in_gamut_bins[np.asarray(index)]
        li, rem = np.divmod(cell, AB_CELLS * AB_CELLS)
        ai, bi = np.divmod(rem, AB_CELLS)
        return np.stack(
            [(li + 0.5) * L_WIDTH, AB_MIN + (ai + 0.5) * AB_WIDTH, AB_MIN + (bi + 0.5) * AB_WIDTH],
            axis=-1,
        )


def lab_quantize(color, binning: LabBinning | None = None):
    """Bin index of a Lab color (scalar int for a single color)."""
    binning = binning or LabBinning.default()
    idx = binning.quantize(color)
    return int(idx) if np.ndim(idx) == 0 else idx


def lab_dequantize(index, binning: LabBinning | None = None) -> np.ndarray:
    binning = binning or LabBinning.default()
    return binning.dequantize(index)
