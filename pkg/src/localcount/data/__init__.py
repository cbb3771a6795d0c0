from .manifest import (
    DatasetManifest, ImageRecord, Split, load_annotation, load_manifest, write_annotation, write_manifest,
)
from .patches import (
    PatchSample, SamplingConfig, TargetMode, add_mean, compute_channel_mean, extract_training_patches,
    lattice, load_image, prepare_arrays, prepare_image, resize_array, resize_image, shuffle_split, stack_batch,
    stack_targets, subtract_mean, to_array,
)
from .synth import SynthConfig, SynthSummary, synth_generate
