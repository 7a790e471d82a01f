"""Identity-oriented multi-task tropical cyclone attribute estimation.

The package couples a parametric wind-field core (:mod:`idol.holland`) with a
synthetic data generator (:mod:`idol.data`), a neural estimator built from an
encoder backbone, a task-dependency flow, a correlation-aware bridge and
attention-based heads (:mod:`idol.backbone`, :mod:`idol.depflow`,
:mod:`idol.bridge`, :mod:`idol.heads`, :mod:`idol.model`), a training harness
(:mod:`idol.train`) and distribution-shift diagnostics
(:mod:`idol.diagnostics`).
"""

from idol.holland import HollandParams, pressure_at_radius, radius_from_pressure

__all__ = ["HollandParams", "pressure_at_radius", "radius_from_pressure"]

__version__ = "0.1.0"
