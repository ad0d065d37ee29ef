"""Neural signed distance fields of static obstacle scenes from LiDAR scans."""

__version__ = "0.1.0"
