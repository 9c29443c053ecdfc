#!/usr/bin/env python3
"""
denoise_tool.py - DenoiseNet training, inference and analysis driver

Trains a deep residual denoiser whose every layer emits a signed noise
component; the denoised image is the noisy input plus the sum of those
components. Also fine-tunes per-class models, compares denoisers by PSNR,
and dumps layer-by-layer traces of the denoising process.

Usage:
    python3 denoise_tool.py synth --synth_kind shapes --output_dir runs/toy --seed 1
    python3 denoise_tool.py train --config toy.json --manifest runs/toy/data/shapes/manifest.tsv --seed 1
    python3 denoise_tool.py finetune --config toy.json --model m.dnet --manifest all.tsv --class_label disks --seed 2
    python3 denoise_tool.py denoise --model m.dnet --input noisy.png --output clean.png
    python3 denoise_tool.py eval --manifest test.tsv --models net=m.dnet --baseline noisy
    python3 denoise_tool.py diagnose --model m.dnet --input clean.png --noise_sigma 25 --seed 3
    python3 denoise_tool.py --version

Every setting can come from a flat JSON file (--config) and be overridden by
a --key value flag. DENOISENET_THREADS sets the worker count when --threads
is not given.
"""

import sys

from denoisenet.cli import main

if __name__ == "__main__":
    sys.exit(main())
