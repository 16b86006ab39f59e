"""voxformer: two-phase training (reconstruction pretraining, then task
fine-tuning) of a conv-encoder / transformer / conv-decoder stack for 4D
volumetric time-series data, on a self-contained autodiff engine."""

__version__ = "0.1.0"
