"""Reference-based LiDAR point-cloud compression.

A source scan is stored as the points exclusive to it with respect to a
nearby historical reference scan and a static map, plus delta-coded
index lists into those shared datasets.
"""

from .codec import CodecConfig, CompressedContainer, compress, decompress, parse_container
from .diffcore import brute_diff, hybrid_diff, map_diff, reconstruct, two_way_diff
from .errors import CodecError, CorruptionError, FormatError, MismatchError, NotFoundError, ParameterError
from .geom import Aabb, PointCloud, Pose, bounding_box, squared_distance
from .metrics import chamfer, chamfer_sym, psnr_point_to_plane
from .refstore import MapCloud, ReferenceDataset, associate, load_dataset, load_map

__version__ = "0.1.0"
