"""Topic/keyword semantic guidance for radiology report generation, on a small numpy autodiff engine."""

__version__ = "0.1.0"
