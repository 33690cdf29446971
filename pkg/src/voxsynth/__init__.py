"""Shape, viewpoint and texture: a disentangled 3D-aware image synthesis pipeline.

A voxel shape generator trained adversarially, a differentiable perspective
projection producing depth + silhouette sketches, and a texture network that
turns sketches into images, with evaluation by Fréchet feature distance.
"""

__version__ = "0.1.0"
