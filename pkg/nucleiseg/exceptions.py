"""
Exception hierarchy for the segmentation toolkit.
Every error carries a human-readable detail and the process exit code
the command-line entry point reports for it.
"""


class NucleiSegError(Exception):
    """Base error for all toolkit failures"""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: int = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class ConfigError(NucleiSegError):
    """Invalid run configuration or command-line combination"""
    exit_code = 2


class VolumeError(NucleiSegError):
    """Unreadable volume file or inconsistent volume contents"""
    exit_code = 3


class LabelRangeError(VolumeError):
    """Label volume with non-integer or out-of-range values"""


class GeometryMismatchError(NucleiSegError):
    """Two volumes that must share a grid do not"""
    exit_code = 3


class PreprocessError(NucleiSegError):
    """Invalid preprocessing request"""
    exit_code = 3


class ChannelMismatchError(NucleiSegError):
    """Input channels do not match the input mode or checkpoint"""
    exit_code = 3


class PatchError(NucleiSegError):
    """Patch sampling or tiling cannot satisfy the requested geometry"""
    exit_code = 3


class CoverageError(PatchError):
    """Stitched output leaves voxels uncovered"""


class NetworkConfigError(NucleiSegError):
    """Unsupported architecture or incompatible patch geometry"""
    exit_code = 2


class TrainingError(NucleiSegError):
    """Training cannot start or continue"""
    exit_code = 4


class DivergenceError(TrainingError):
    """Loss became non-finite"""


class EvaluationError(NucleiSegError):
    """Evaluation inputs are unusable"""
    exit_code = 5


class PhantomError(NucleiSegError):
    """Phantom specification cannot be realized"""
    exit_code = 6
