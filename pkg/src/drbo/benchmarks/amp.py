"""Two-stage amplifier analytic proxy.

Square-law small-signal formulas with fixed bias constants. Design is
(W1, W6, W7, R) with widths in µm; variations (ε2, ε4) set the mismatched
widths W2 = (1+ε2)·W1 and W4 = (1+ε4)·W3. The tail and output-stage
currents are mirrored from a reference (I5 ∝ W5 = W7/R, I7 ∝ W7) and the
load mirror is W3 = W6/(2R).

power  VDD·(I_ref + I5 + I7) + p_w·(W1 + W6 + W7)          mW
gain   20·log10(A1·A2) - 10·log10(1 + A1·A2·M)             dB
       A1 = gm1/(λ·I5), A2 = gm6/(λ·I7 + 1/R_L),
       M  = ((ε2·Vov1)^2 + (ε4·Vov3)^2)/V_m^2
UGF    gm1/(2π·Cc)                                         MHz
PM     90 - atan(UGF/p2) - atan(UGF/z)                     degrees
       p2 = gm6/(2π·(CL + c_w·W6)), z = gm6/(2π·Cc)

Mismatch enters only through M, which is even in each of ε2, ε4 and zero at
ε = 0, so matched pairs give the largest gain for a fixed design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import InvalidInputError, OracleOutput


@dataclass(frozen=True)
class AmpProxyConfig:
    vdd: float = 1.8
    i_ref_ua: float = 10.0
    i_unit_ua_per_um: float = 4.0
    width_power_mw_per_um: float = 1e-4
    kn_ua_per_v2_um: float = 300.0
    kp_ua_per_v2_um: float = 300.0
    clm_per_v: float = 1.0
    load_kohm: float = 3.0
    cc_pf: float = 0.16
    cl_pf: float = 0.032
    cw_pf_per_um: float = 0.0016
    mismatch_v: float = 0.02
    gain_min: float = 30.0
    ugf_min: float = 120.0
    pm_min: float = 60.0
    bounds: tuple = ((2.0, 10.0, 2.0, 0.5), (20.0, 80.0, 20.0, 4.0))
    variation_guard: float = 0.5

    n_constraints = 3

    def performance(self, designs: np.ndarray, variations: np.ndarray):
        """(power mW, gain dB, UGF MHz, PM deg) for each row."""
        w1, w6, w7, r = (designs[:, i] for i in range(4))
        e2, e4 = variations[:, 0], variations[:, 1]
        w5 = w7 / r
        w3 = w6 / (2.0 * r)
        i5 = self.i_unit_ua_per_um * w5
        i7 = self.i_unit_ua_per_um * w7
        power = self.vdd * (self.i_ref_ua + i5 + i7) * 1e-3 + self.width_power_mw_per_um * (w1 + w6 + w7)
        gm1 = np.sqrt(2.0 * self.kn_ua_per_v2_um * w1 * 0.5 * i5)  # µS
        vov1 = i5 / gm1
        vov3 = np.sqrt(i5 / (self.kp_ua_per_v2_um * w3))
        gm6 = np.sqrt(2.0 * self.kp_ua_per_v2_um * w6 * i7)
        a1 = gm1 / (self.clm_per_v * i5)
        a2 = gm6 / (self.clm_per_v * i7 + 1e3 / self.load_kohm)
        mism = ((e2 * vov1) ** 2 + (e4 * vov3) ** 2) / self.mismatch_v**2
        gain = 20.0 * np.log10(a1 * a2) - 10.0 * np.log10(1.0 + a1 * a2 * mism)
        ugf = gm1 / (2.0 * math.pi * self.cc_pf)
        p2 = gm6 / (2.0 * math.pi * (self.cl_pf + self.cw_pf_per_um * w6))
        z = gm6 / (2.0 * math.pi * self.cc_pf)
        pm = 90.0 - np.degrees(np.arctan(ugf / p2)) - np.degrees(np.arctan(ugf / z))
        return power, gain, ugf, pm

    def evaluate(self, designs, variations):
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        variations = np.atleast_2d(np.asarray(variations, dtype=float))
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        if np.any(designs < lo - 1e-9) or np.any(designs > hi + 1e-9):
            raise InvalidInputError("amplifier design outside its box")
        if np.any(np.abs(variations) > self.variation_guard):
            raise InvalidInputError(f"|ε| above the {self.variation_guard} guard")
        power, gain, ugf, pm = self.performance(designs, variations)
        margins = np.stack([self.gain_min - gain, self.ugf_min - ugf, self.pm_min - pm], axis=1)
        return power, margins

    def to_config(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["bounds"] = [list(b) for b in self.bounds]
        return out


def amp_oracle(config: AmpProxyConfig, design, variation) -> OracleOutput:
    obj, margins = config.evaluate(np.atleast_2d(design), np.atleast_2d(variation))
    return OracleOutput(obj[0], tuple(margins[0]))
