"""Visual localization with depth-augmented image maps.

Builds maps of posed RGB images with triangulated dense depth and retrieval
descriptors, and localizes query images by lifting dense 2D-2D matches to
2D-3D correspondences and running confidence-weighted LO-RANSAC.
"""

__version__ = "0.1.0"
