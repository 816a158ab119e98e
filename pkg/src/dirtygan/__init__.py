"""GAN toolkit for dirty tabular data.

Handles the three defects real-world tables ship with: missing elements,
missing labels, and class imbalance. Six jointly trained networks perform
adversarial imputation, class-conditional oversampling in a shared hidden
space, and semi-supervised classification, all on a self-contained
reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
