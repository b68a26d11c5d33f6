"""EEG-spectrogram-to-fMRI-volume synthesis, built on a small tape-based
autodiff engine: preprocessing, convolutional-attention encoder, state-space
U-Net decoder, hybrid structural/MSE loss, and a training harness."""

__version__ = "0.1.0"
