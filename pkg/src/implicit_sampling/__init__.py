"""Query-point sampling, labeling and evaluation for implicit 3D reconstruction."""

from . import fields, mesh, metrics, sampling, toynet
from .fields import OCC, SDF, TSDF, UDF, Box, FieldKind, MeshShape, Sphere, Torus, batch_label, evaluate_field
from .sampling import BUILTIN_NAMES, LabeledDataset, StrategySpec, build_dataset, expand_builtin, load_dataset, save_dataset

__version__ = "0.1.0"
