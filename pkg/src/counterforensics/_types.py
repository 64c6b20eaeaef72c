from __future__ import annotations

import numpy as np
import numpy.typing as npt

Tensor = npt.NDArray[np.float64]
PixelArray = npt.NDArray[np.uint8]
IntArray = npt.NDArray[np.int64]
