"""Presentation layer for homoglab result bundles.

Reads the documented bundle formats (config.ini, schema-1 CSV, summary.json,
npy dumps) and renders panels and rate plots. No statistic is computed here:
every number shown on a figure is read from the bundle.
"""

from homogfig.errors import BundleFormatError
from homogfig.io import Bundle, load_bundle
from homogfig.panels import corrector_panel, field_panel
from homogfig.rates import rate_figure
from homogfig.render import save_figure

__all__ = [
    "Bundle",
    "BundleFormatError",
    "corrector_panel",
    "field_panel",
    "load_bundle",
    "rate_figure",
    "save_figure",
]
