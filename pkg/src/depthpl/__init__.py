"""Domain-adaptive monocular depth estimation with 2D/3D pseudo-labels.

Subpackages follow the processing pipeline: tensor (autodiff engine),
geometry (camera model, projections, warping), losses, networks (depth and
point-completion models), pseudolabel (label generation and fusion),
scenegen (procedural dual-domain data), pipeline (training stages and
evaluation), formats/config/cli (file formats, run configuration, CLI).
"""

__version__ = "0.1.0"
