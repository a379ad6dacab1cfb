"""Offline dense-descriptor exporter producing TDSC interchange files."""

from .backbones import FeatureMap, ModelLoadError, load_backbone
from .export import ExportError, ExportJob, export

__version__ = "0.1.0"
