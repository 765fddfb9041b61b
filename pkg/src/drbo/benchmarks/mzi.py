"""Third-order MZI lattice filter proxy.

Three directional couplers joined by two unequal arm pairs. The first gap is
fixed; the design is the remaining two gaps (nm) and each variation is an
additive nm perturbation of the corresponding gap. Coupler power coupling is
κ(g) = κ0·exp(-g/g0). Each arm pair contributes a differential phase
offset + 2π·ν/FSR, where ν is the optical frequency detuning from the
wavelength-grid center, plus a fixed propagation loss.

Outputs on the cross port:
  bandwidth   3-dB width (GHz) of the lobe around ν = 0, from linear
              interpolation of the half-peak crossings
  crosstalk   worst stopband leakage relative to the peak (dB)
  attenuation -10·log10(peak transmission) (dB)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import InvalidInputError, OracleOutput

C_NM_GHZ = 299_792.458  # speed of light in nm·GHz


@dataclass(frozen=True)
class MziProxyConfig:
    fixed_gap: float = 200.0
    kappa0: float = 2.0728
    coupling_decay: float = 80.5
    arm_phase_coefficients: tuple = (0.0, 0.0)
    arm_loss_db: float = 0.2
    fsr_ghz: float = 800.0
    center_wavelength: float = 1550.0
    n_grid: int = 256
    stopband_fraction: float = 0.8
    xt_threshold: float = -12.0
    alpha_threshold: float = 1.0
    bounds: tuple = ((100.0, 100.0), (300.0, 300.0))

    def __post_init__(self):
        object.__setattr__(self, "arm_phase_coefficients", tuple(float(v) for v in self.arm_phase_coefficients))
        if self.n_grid < 64:
            raise InvalidInputError("wavelength grid needs at least 64 points")
        if self.coupling_decay <= 0 or self.kappa0 <= 0:
            raise InvalidInputError("coupling model constants must be positive")
        lo = min(self.bounds[0]) - 15.0  # 6 sigma at the widest shift
        if self.kappa(lo) >= 1.0:
            raise InvalidInputError("coupling coefficient reaches 1 inside the variation-extended gap range")

    n_constraints = 2

    def kappa(self, gap):
        return self.kappa0 * np.exp(-np.asarray(gap, dtype=float) / self.coupling_decay)

    @property
    def wavelength_grid(self) -> np.ndarray:
        """Strictly increasing wavelengths (nm) spanning one FSR around the center."""
        lam0 = self.center_wavelength
        nu = self.detuning
        return np.sort(C_NM_GHZ / (C_NM_GHZ / lam0 + nu))

    @property
    def detuning(self) -> np.ndarray:
        half = self.fsr_ghz / 2.0
        return np.linspace(-half, half, self.n_grid, endpoint=False)

    def transmission(self, gaps: np.ndarray) -> np.ndarray:
        """Cross-port power transmission, shape (n, n_grid), for effective gaps (n, 2)."""
        gaps = np.atleast_2d(gaps)
        n = gaps.shape[0]
        k = [np.full(n, float(self.kappa(self.fixed_gap))), self.kappa(gaps[:, 0]), self.kappa(gaps[:, 1])]
        if np.any(k[1] >= 1) or np.any(k[2] >= 1) or np.any(k[1] <= 0) or np.any(k[2] <= 0):
            raise InvalidInputError("coupling outside (0, 1); gap perturbation too large")
        amp = 10.0 ** (-self.arm_loss_db / 20.0)
        phi = 2.0 * math.pi * self.detuning / self.fsr_ghz
        # field after the first coupler for input on port 0
        t0, s0 = np.sqrt(1 - k[0]), np.sqrt(k[0])
        a = np.broadcast_to((t0 + 0j)[:, None], (n, self.n_grid))
        b = np.broadcast_to((-1j * s0)[:, None], (n, self.n_grid))
        for stage in range(2):
            half = 0.5 * (phi + self.arm_phase_coefficients[stage])
            a = a * amp * np.exp(-1j * half)[None, :]
            b = b * amp * np.exp(1j * half)[None, :]
            t = np.sqrt(1 - k[stage + 1])[:, None]
            s = np.sqrt(k[stage + 1])[:, None]
            a, b = t * a - 1j * s * b, -1j * s * a + t * b
        return np.abs(b) ** 2

    def metrics(self, gaps: np.ndarray):
        """(bandwidth GHz, crosstalk dB, attenuation dB) for each row of effective gaps."""
        tr = self.transmission(gaps)
        nu = self.detuning
        n, g = tr.shape
        main = np.abs(nu) <= self.fsr_ghz / 4.0
        idx_main = np.flatnonzero(main)
        peak_local = np.argmax(tr[:, main], axis=1)
        ipk = idx_main[peak_local]
        peak = tr[np.arange(n), ipk]
        half = 0.5 * peak
        below = tr < half[:, None]
        cols = np.arange(g)[None, :]
        right_mask = below & (cols > ipk[:, None])
        left_mask = below & (cols < ipk[:, None])
        has_r = right_mask.any(axis=1)
        has_l = left_mask.any(axis=1)
        ir = np.where(has_r, np.argmax(right_mask, axis=1), g - 1)
        il = np.where(has_l, g - 1 - np.argmax(left_mask[:, ::-1], axis=1), 0)
        rows = np.arange(n)

        def crossing(i_out, i_in):
            t_out, t_in = tr[rows, i_out], tr[rows, i_in]
            frac = (t_in - half) / np.where(t_in - t_out > 0, t_in - t_out, 1.0)
            return nu[i_in] + frac * (nu[i_out] - nu[i_in])

        nu_r = np.where(has_r, crossing(ir, np.maximum(ir - 1, 0)), nu[-1])
        nu_l = np.where(has_l, crossing(il, np.minimum(il + 1, g - 1)), nu[0])
        bandwidth = nu_r - nu_l
        stop = np.abs(nu) >= self.stopband_fraction * self.fsr_ghz / 2.0
        leak = tr[:, stop].max(axis=1)
        crosstalk = 10.0 * np.log10(np.maximum(leak, 1e-30) / peak)
        attenuation = -10.0 * np.log10(peak)
        return bandwidth, crosstalk, attenuation

    def evaluate(self, designs, variations):
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        if np.any(designs < lo - 1e-9) or np.any(designs > hi + 1e-9):
            raise InvalidInputError("MZI design outside the gap bounds")
        gaps = designs + np.atleast_2d(np.asarray(variations, dtype=float))
        bw, xt, att = self.metrics(gaps)
        margins = np.stack([xt - self.xt_threshold, att - self.alpha_threshold], axis=1)
        return -bw, margins

    def to_config(self) -> dict:
        return {
            "fixed_gap": self.fixed_gap,
            "kappa0": self.kappa0,
            "coupling_decay": self.coupling_decay,
            "arm_phase_coefficients": list(self.arm_phase_coefficients),
            "arm_loss_db": self.arm_loss_db,
            "fsr_ghz": self.fsr_ghz,
            "center_wavelength": self.center_wavelength,
            "n_grid": self.n_grid,
            "stopband_fraction": self.stopband_fraction,
            "xt_threshold": self.xt_threshold,
            "alpha_threshold": self.alpha_threshold,
            "bounds": [list(b) for b in self.bounds],
        }


def mzi_oracle(config: MziProxyConfig, design, variation) -> OracleOutput:
    obj, margins = config.evaluate(np.atleast_2d(design), np.atleast_2d(variation))
    return OracleOutput(obj[0], tuple(margins[0]))
