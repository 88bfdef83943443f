"""Physical constants (exact SI 2019 values) used for every derived quantity."""

import math

PLANCK_H = 6.62607015e-34
ELEMENTARY_CHARGE = 1.602176634e-19
HBAR = PLANCK_H / (2.0 * math.pi)
FLUX_QUANTUM = PLANCK_H / (2.0 * ELEMENTARY_CHARGE)


def constants_table() -> dict:
    return {
        "h": PLANCK_H,
        "e": ELEMENTARY_CHARGE,
        "hbar": HBAR,
        "Phi0": FLUX_QUANTUM,
    }
