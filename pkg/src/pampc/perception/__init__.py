from .detection import BackprojectionError, Detection, OracleConfig, backproject, oracle_detect
from .edges import canny
from .hough import HoughGrid, HoughLine, hough_lines, p_hough_lines
from .metrics import chamfer_distance, chamfer_prf, rasterize_segment
from .scene import RasterImage, SceneLine, SceneModel, clip_segment, project_segment, render, render_depth_windows
from .tracking import AssociationConfig, Track, TrackSet, associate, association_cost, hungarian
