"""Regenerate the bundled 33x33 letter-E bitmap.

Strokes carry full ink (255); a one-pixel anti-aliasing fringe carries 64.
Run from the repository root; prints the SHA-256 to paste into
``distributions.LETTER_E_SHA256``.
"""

import hashlib
from pathlib import Path

import numpy as np

from ehrenfest_mjp.distributions import write_pgm

N = 33
ink = np.zeros((N, N), dtype=bool)
ink[3:30, 7:12] = True    # spine
ink[3:8, 7:26] = True     # top arm
ink[14:19, 7:23] = True   # middle arm
ink[25:30, 7:26] = True   # bottom arm

fringe = np.zeros_like(ink)
fringe[1:, :] |= ink[:-1, :]
fringe[:-1, :] |= ink[1:, :]
fringe[:, 1:] |= ink[:, :-1]
fringe[:, :-1] |= ink[:, 1:]
fringe &= ~ink

img = np.where(ink, 255, np.where(fringe, 64, 0)).astype(np.uint8)
out = Path("src/ehrenfest_mjp/data/letter_e.pgm")
write_pgm(out, img)
print(hashlib.sha256(out.read_bytes()).hexdigest())
