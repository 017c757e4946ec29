import json
import os
import time

import pytest

from denoiselab import NoiseParams, PhantomSpec, TrainConfig, UNetConfig, UNetModel, \
    load_weights, make_phantoms, save_weights, train, train_supervised
from denoiselab.training import _eval_noisy, noisy_baseline_psnr, split_corpus

CACHE_DIR = os.path.join(os.path.dirname(__file__), "_model_cache")

# Desk-scale acceptance configuration: 2000 steps, peak 200, sigma 0.02,
# 64x64 patches on a 12-phantom corpus (last fifth held out).
ACC_SEED = 101
ACC_NOISE = NoiseParams(peak=200, sigma=0.02, seed=ACC_SEED)
ACC_STEPS = 2000
# The color arm keeps the same recipe but runs longer: three input channels
# stretch the same network capacity, and the 10-minute desk budget only
# applies to the gray efficacy run.
ACC_STEPS_COLOR = 3500


def acceptance_corpus(channels):
    return make_phantoms(PhantomSpec(count=16, size=128, channels=channels,
                                     seed=ACC_SEED))


def acceptance_config(steps=ACC_STEPS):
    return TrainConfig(noise=ACC_NOISE, lr=1e-3, batch_size=8, patch_size=64,
                       steps=steps, seed=ACC_SEED, eval_every=250)


def _train_cached(channels, supervised):
    """Train (or reload) one acceptance model; training is deterministic, so
    the checkpoint cache only skips repeated work, never changes results."""
    os.makedirs(CACHE_DIR, exist_ok=True)
    steps = ACC_STEPS if channels == 1 else ACC_STEPS_COLOR
    arm = "sup" if supervised else "n2n"
    stem = os.path.join(CACHE_DIR, "%s_%dch_seed%d_steps%d" % (arm, channels,
                                                               ACC_SEED, steps))
    ckpt, meta_path = stem + ".n2nw", stem + ".json"
    if os.path.exists(ckpt) and os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        return load_weights(ckpt), meta

    corpus = acceptance_corpus(channels)
    cfg = acceptance_config(steps)
    model = UNetModel.initialize(UNetConfig(in_channels=channels, depth=2,
                                            base_channels=16), seed=ACC_SEED)
    start = time.perf_counter()
    runner = train_supervised if supervised else train
    model, trace = runner(model, corpus, cfg)
    elapsed = time.perf_counter() - start

    _, held = split_corpus(corpus)
    baseline = noisy_baseline_psnr(held, _eval_noisy(held, cfg))
    meta = {"elapsed_s": elapsed, "baseline_psnr": baseline,
            "final_psnr": trace.final_psnr(), "input_digest": trace.input_digest,
            "records": trace.records}
    save_weights(model, ckpt)
    with open(meta_path, "w") as fh:
        json.dump(meta, fh)
    return model, meta


@pytest.fixture(scope="session")
def gray_model():
    return _train_cached(channels=1, supervised=False)


@pytest.fixture(scope="session")
def color_model():
    return _train_cached(channels=3, supervised=False)


@pytest.fixture(scope="session")
def supervised_gray_model():
    return _train_cached(channels=1, supervised=True)
