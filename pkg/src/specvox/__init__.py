"""Joint reconstruction of multispectral voxel radiance fields and camera SSFs."""

__version__ = "0.1.0"
