class SegmentationError(Exception):
    """Failure of one pipeline stage; `stage` names it, `code` is the response error code"""

    stage = "pipeline"
    code = "SEGMENTATION_FAILED"

    def __init__(self, message: str, stage: str = None, code: str = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        if code is not None:
            self.code = code

    def __str__(self):
        return f"[{self.stage}] {super().__str__()}"


class NoPupilCandidateError(SegmentationError):
    stage = "pupil"
    code = "NO_PUPIL_CANDIDATE"


class PupilNotFoundError(SegmentationError):
    stage = "pupil"
    code = "PUPIL_NOT_FOUND"


class BoundaryNotRecoverableError(SegmentationError):
    stage = "boundary"
    code = "BOUNDARY_NOT_RECOVERABLE"


class LimbicNotFoundError(SegmentationError):
    stage = "limbic"
    code = "LIMBIC_NOT_FOUND"


class ImageLoadError(ValueError):
    code = "IMAGE_LOAD_ERROR"


class KernelFitError(ValueError):
    code = "KERNEL_TOO_LARGE"


class CorpusError(ValueError):
    code = "CORPUS_ERROR"
