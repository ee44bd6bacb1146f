"""Counter-based random streams.

Every draw is addressed by ``(seed, tag, index)``: a Philox key built from
``seed`` and ``tag`` selects a stream, and ``index`` is the position of the
draw inside it.  Any block of a stream can be produced on its own, so the
values never depend on the order in which blocks are requested.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_WORDS_PER_COUNTER = 4  # Philox4x64 emits four 64-bit words per counter value
_KIND_SHIFT = 56


def _bit_generator(seed: int, tag: int, start: int) -> np.random.Philox:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, tag & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    bg = np.random.Philox(key=key)
    whole, rest = divmod(start, _WORDS_PER_COUNTER)
    if whole:
        bg.advance(whole)
    if rest:
        bg.random_raw(rest)
    return bg


def raw_words(seed: int, tag: int, start: int, count: int) -> np.ndarray:
    return _bit_generator(seed, tag, start).random_raw(count)


def to_unit(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words into (0, 1).

    The top 53 bits of each word pick a cell of width 2**-53 and the draw is
    its midpoint, so 0 and 1 are never produced.
    """
    u = (words >> np.uint64(11)).astype(np.float64)
    u += 0.5
    u *= 2.0**-53
    return u


def split_unit(words: np.ndarray):
    """Two uniforms in (0, 1) per word, from its high and low 32 bits (cell midpoints)."""
    hi = (words >> np.uint64(32)).astype(np.int64).astype(np.float64)
    lo = (words & np.uint64(0xFFFFFFFF)).astype(np.int64).astype(np.float64)
    hi += 0.5
    hi *= 2.0**-32
    lo += 0.5
    lo *= 2.0**-32
    return hi, lo


def uniforms(seed: int, tag: int, start: int, count: int) -> np.ndarray:
    """Draws ``start .. start+count-1`` of stream ``(seed, tag)`` in (0, 1)."""
    return to_unit(raw_words(seed, tag, start, count))


@numba.njit(cache=True)
def normal_quantile(p):
    """Standard normal quantile by Wichura's AS241 (about 1e-16 relative accuracy).

    Compiled so the particle kernel can inline it.
    """
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                    + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                  + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) * q
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                    + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                  + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                + 4.2313330701600911252e+1) * r + 1.0)
        return num / den
    r = p if q <= 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.7454501427834140764e-4 * r + 2.2723844989269184583e-2) * r
                    + 2.4178072517745061177e-1) * r + 1.2704582524523683826e+0) * r
                  + 3.6478483247632046050e+0) * r + 5.7694972214606914055e+0) * r
                + 4.6303378461565452959e+0) * r + 1.4234371107496835773e+0)
        den = (((((((1.0507500716444168432e-9 * r + 5.4759380849953449460e-4) * r
                    + 1.5198666563616457197e-2) * r + 1.4810397642748007459e-1) * r
                  + 6.8976733498510000455e-1) * r + 1.6763848301838038494e+0) * r
                + 2.0531916266377588219e+0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.0103343992922881326e-7 * r + 2.7115555687434875782e-5) * r
                    + 1.2426609473880784386e-3) * r + 2.6532189526576123093e-2) * r
                  + 2.9656057182850489123e-1) * r + 1.7848265399172913358e+0) * r
                + 5.4637849111641143699e+0) * r + 6.6579046435011037772e+0)
        den = (((((((2.0442631033899397856e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.8686913114561325910e-4) * r
                  + 1.4875361290850614853e-2) * r + 1.3692988092273580531e-1) * r
                + 5.9983220655588793769e-1) * r + 1.0)
    x = num / den
    return -x if q < 0.0 else x


@numba.vectorize(["float64(float64)"], cache=True)
def _normal_quantile_ufunc(p):
    return normal_quantile(p)


def normal_from_unit(u: np.ndarray) -> np.ndarray:
    return _normal_quantile_ufunc(u)


def normals(seed: int, tag: int, start: int, count: int) -> np.ndarray:
    return normal_from_unit(uniforms(seed, tag, start, count))


def exponentials(seed: int, tag: int, start: int, count: int) -> np.ndarray:
    return -np.log(uniforms(seed, tag, start, count))


def particle_tag(step: int) -> int:
    """Stream of one time step of the particle simulation.

    Word ``p`` belongs to particle ``p``: its high 32 bits drive the normal
    increment and its low 32 bits the bridge-extremum uniform.
    """
    return (1 << _KIND_SHIFT) | int(step)


def queue_tag(player_key: int, channel: int) -> int:
    """Stream of unit-rate exponential clocks of one queue (0 arrivals, 1 services)."""
    return (2 << _KIND_SHIFT) | (int(player_key) << 1) | int(channel)
