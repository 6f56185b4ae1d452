"""Recurrent attention model (hard visual attention) for augmented MNIST.

The subpackages map onto the pipeline: :mod:`ram.dataset` (IDX loading and
canvas augmentation), :mod:`ram.glimpse` (foveated sensor), :mod:`ram.nncore`
(layers with explicit backward passes), :mod:`ram.model` (the five-part
network), :mod:`ram.training` and :mod:`ram.optim` (hybrid CE + REINFORCE
training), :mod:`ram.sweep` (one-parameter linear searches) and
:mod:`ram.report` (metrics files, SVG figures, summary tables).
"""

from .dataset import AugmentConfig, ImageSample, augment, batches, load_idx
from .glimpse import GlimpseConfig, Location, RetinaObservation, extract_patch, downsample, retina
from .model import EpisodeTrace, ModelDims, RamParams, forward_episode, init_params
from .training import HyperParams, RunConfig, evaluate, prepare_data, train
from .sweep import RunResult, SweepSpec, compare, expand, run_sweep

__version__ = "0.1.0"
