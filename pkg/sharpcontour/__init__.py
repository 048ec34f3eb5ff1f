"""
SharpContour: refine coarse instance contours by marching each vertex along
its normal until a point classifier's inside/outside decision flips.

Modules:
- geometry      polygons, shapes, normals, signed distances
- fields        probability fields (oracle, raster, instance-aware MLP)
- evolution     the contour evolution itself
- ipc_training  focal-loss training of the point classifier and its controller head
- raster        masks, marching squares, scanline fill, PGM
- metrics       IoU, Boundary IoU, boundary distances, corner error
- harness       synthetic corpus, perturbations, regression baselines, sweeps
- documents     JSON / SVG / .npy files
- cli           command line
"""

__version__ = '0.1.0'
