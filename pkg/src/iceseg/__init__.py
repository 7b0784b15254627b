"""Sea-ice type segmentation of SAR scenes.

Chart polygons are reduced to dominant-ice-type labels, rasterized onto the
scene grid, and a compact encoder-decoder CNN is trained on random patches
under cross-entropy, soft Dice or Focal loss. Full scenes are scored with
support-weighted F1 and rendered as class/error maps.
"""

from .ice_types import IGNORE_VALUE, ChartPolygon, IceType, class_frequencies, dominant_ice_type
from .geotiff import GeoRaster, GeoTransform, read_geotiff, write_geotiff
from .ingest import (LabelRaster, SceneStack, load_scene, normalize,
                     rasterize_labels, read_chart_geojson, write_chart_geojson)
from .sampling import Patch, SplitManifest, build_split, sample_patches
from .model import IceTypeNet, ModelConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .losses import LossSpec, ce_loss, dice_loss, focal_loss, make_loss
from .training import PlateauSchedule, TrainingConfig, run_experiment, train
from .evaluation import (EvalReport, class_map_image, confusion_matrix,
                         error_map_image, evaluate_prediction, predict_scene)
from .synthetic import SynthSpec, generate, guillotine_regions, make_monthly_dataset

__version__ = "0.1.0"
