"""Unit conversions used when loading configuration.

Everything downstream of the config loader works in SI units (W, Hz, s, bits,
cycles/s), so these helpers are the only place logarithmic units appear.
"""

import numpy as np

BITS_PER_BYTE = 8


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watt(dbm):
    """23 dBm -> 0.19953 W."""
    return db_to_linear(dbm) * 1e-3


def watt_to_dbm(w):
    return linear_to_db(np.asarray(w, dtype=float) * 1e3)
