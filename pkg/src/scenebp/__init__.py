"""scenebp: particle belief propagation and unsupervised CRF pipelines for
scene geometry (slanted-plane stereo, monocular depth, stereo-video motion).
"""

__version__ = "0.1.0"
