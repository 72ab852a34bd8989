"""hotgrid: forecasting content-delivery hotspots on a Geohash grid.

The package turns a log of geotagged, timestamped content requests into
per-cell hotspot predictions: requests are snapped to Geohash cells,
linked into a spatio-temporal graph (sharing chains plus friendships),
segmented into time windows, and fed to a small graph-recurrent model
trained with a NumPy reverse-mode tape.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, HotgridError, NumericError

__all__ = [
    "ConfigError",
    "DataError",
    "HotgridError",
    "NumericError",
    "__version__",
]
