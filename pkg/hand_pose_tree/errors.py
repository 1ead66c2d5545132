# hand_pose_tree/errors.py

"""
Jerarquía de excepciones del paquete.

Cada excepción lleva un ``exit_code`` que la CLI usa directamente:
2 para errores de datos y 3 para fallos numéricos.
"""

DATA_ERROR = 2
NUMERIC_FAILURE = 3


class HandPoseError(Exception):
    exit_code = DATA_ERROR


class DegeneratePalmError(HandPoseError):
    pass


class ZeroLengthBoneError(HandPoseError):
    pass


class ZeroQuaternionError(HandPoseError):
    pass


class InvalidParameterError(HandPoseError):
    pass


class BehindCameraError(HandPoseError):
    pass


class EmptyFrameError(HandPoseError):
    pass


class ShapeMismatchError(HandPoseError):
    pass


class DegenerateFingerError(HandPoseError):
    pass


class BadInputSizeError(HandPoseError):
    pass


class SingularSystemError(HandPoseError):
    pass


class RejectedSampleError(HandPoseError):
    pass


class DatasetFormatError(HandPoseError):
    pass


class CheckpointError(HandPoseError):
    pass


class ConfigError(HandPoseError):
    pass


class OutputDirectoryError(HandPoseError):
    pass


class NonFiniteActivationError(HandPoseError):
    exit_code = NUMERIC_FAILURE

    def __init__(self, layer: str):
        super().__init__(f"activación no finita en la capa '{layer}'")
        self.layer = layer


class NonFiniteGradientError(HandPoseError):
    exit_code = NUMERIC_FAILURE

    def __init__(self, layer: str):
        super().__init__(f"gradiente no finito en la capa '{layer}'")
        self.layer = layer


class GradientCheckError(HandPoseError):
    exit_code = NUMERIC_FAILURE
