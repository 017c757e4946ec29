"""Denoising toolkit for fluorescence-microscopy-style images: Poisson-Gaussian
noise synthesis, frame averaging, TV and non-local-means baselines, a small
U-Net trained with noisy targets, PSNR scoring, and a benchmark CLI."""

from .image import Image, ImageFormatError, Roi, crop, load_image, save_image, \
    split_slices, stack_slices
from .noise import INFINITE_PSNR, NoiseParams, average_stack, corrupt, \
    format_psnr, mse, psnr, sample_poisson
from .classical import NlmParams, TvParams, nlm_denoise, tv_denoise, tv_energy
from .network import CheckpointError, UNetConfig, UNetModel, adam_step, \
    denoise_cnn, load_weights, save_weights, unet_forward
from .training import PhantomSpec, TrainConfig, TrainTrace, make_clean_target_set, \
    make_pair, make_phantoms, mse_loss, train, train_supervised

__version__ = "0.1.0"
