"""Multi-modal spatio-temporal graph learning for urban event forecasting.

Fuses city-wide weather series (1D), tract-level socio-economic features (2D)
and tract x time event counts (3D), builds homophily-weighted tract graphs and
trains STGCN / STZINB forecasters for one-step-ahead prediction.
"""

__version__ = "0.1.0"
