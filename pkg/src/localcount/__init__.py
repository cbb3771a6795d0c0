"""Object counting by regressing local counts over overlapping image patches."""

from .config import RunConfig
from .density import DotAnnotation, gaussian_kernel, local_count, render_density, total_count
from .errors import CheckpointError, DataError, LocalCountError, NumericError, ShapeError
from .evaluation import EvalResult, EvalRow, evaluate, mae, mse
from .infer import CountResult, enumerate_windows, final_count, merge_counts, predict_image

__version__ = "0.1.0"
