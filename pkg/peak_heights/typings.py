from collections.abc import Callable

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
RealLike = float | FloatArray

Integrand1D = Callable[[FloatArray], FloatArray]
Integrand2D = Callable[[FloatArray, FloatArray], FloatArray]
EigenFunctional = Callable[[FloatArray], FloatArray]
TailFunction = Callable[[FloatArray], FloatArray]
