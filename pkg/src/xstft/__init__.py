"""Video classification networks built from fixed short-time Fourier
transform blocks, implemented in numpy with hand-written backward passes."""

from .blocks import BlockSpec, InceptionSpec, build_block, build_inception
from .complexity import count_flops, count_params
from .data import Pipeline, gen_direction_dataset, read_dataset, sample_frames, write_dataset
from .network import (
    NetworkSpec,
    build_network,
    full_spec,
    init_orthogonal,
    load_checkpoint,
    micro_spec,
    save_checkpoint,
    softmax,
)
from .oracle import brute_dft, grad_check
from .stft_kernel import build_basis, enumerate_frequencies
from .training import SGD, TrainConfig, cross_entropy, train

__version__ = "0.1.0"

__all__ = [
    "BlockSpec", "InceptionSpec", "build_block", "build_inception",
    "count_flops", "count_params",
    "Pipeline", "gen_direction_dataset", "read_dataset", "sample_frames", "write_dataset",
    "NetworkSpec", "build_network", "full_spec", "init_orthogonal", "load_checkpoint",
    "micro_spec", "save_checkpoint", "softmax",
    "brute_dft", "grad_check",
    "build_basis", "enumerate_frequencies",
    "SGD", "TrainConfig", "cross_entropy", "train",
]
