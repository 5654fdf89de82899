class PeakHeightError(Exception):
    exit_code = 1

    def __init__(self, message: str, exit_code: int | None = None):
        super().__init__(message)
        self.message = message

        if exit_code is not None:
            self.exit_code = exit_code


class InvalidParameterError(PeakHeightError, ValueError):
    exit_code = 2


class DegenerateSpecError(InvalidParameterError):
    pass


class QuadratureError(PeakHeightError):
    def __init__(self, *, achieved_error: float, tolerance: float, n_subdivisions: int):
        super().__init__(
            f'Quadrature did not converge after {n_subdivisions} subdivisions: '
            f'achieved error {achieved_error:.3e}, tolerance {tolerance:.3e}',
        )
        self.achieved_error = achieved_error
        self.tolerance = tolerance
        self.n_subdivisions = n_subdivisions


class WeightDegeneracyError(PeakHeightError):
    def __init__(self, *, ess: float, n_samples: int):
        super().__init__(
            f'Importance weights degenerate: effective sample size {ess:.1f} '
            f'is below 1% of {n_samples} draws',
        )
        self.ess = ess
        self.n_samples = n_samples


class UnreliableEstimateError(PeakHeightError):
    pass


class SimulationError(PeakHeightError):
    pass


class InsufficientPeaksError(PeakHeightError):
    exit_code = 3

    def __init__(self, *, n_peaks: int, required: int):
        super().__init__(f'Only {n_peaks} peaks found, at least {required} required')
        self.n_peaks = n_peaks
        self.required = required


class OutputAssertionError(PeakHeightError):
    exit_code = 4
