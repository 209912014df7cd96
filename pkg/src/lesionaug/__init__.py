"""Class-conditional zoom augmentation experiments on synthetic lesion images."""

__version__ = "0.1.0"
