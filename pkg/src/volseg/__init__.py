"""Desk-scale adversarial 3D segmentation pipeline.

A recurrent (ConvLSTM) U-Net generator paired with a 3D patch-wise
discriminator, plus the full preprocessing, post-processing,
threshold-tuning, and lesion-wise evaluation machinery around them.
"""

__version__ = "0.1.0"
