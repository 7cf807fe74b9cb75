from .stgcn import STGCN, STGCNConfig, ChebGraphConv, TemporalGatedConv, huber_loss, scaled_laplacian
from .stzinb import STZINB, STZINBConfig, CrossAttention, DiffusionGraphConv, TemporalConvTCN, multihead_attention
from .training import History, Windows, fit, make_windows, step_lr
from .zinb import ZINBParams, zinb_log_prob, zinb_logpmf, zinb_mean, zinb_nll, zinb_pmf, zinb_quantile

__all__ = [
    "STGCN", "STGCNConfig", "ChebGraphConv", "TemporalGatedConv", "huber_loss", "scaled_laplacian",
    "STZINB", "STZINBConfig", "CrossAttention", "DiffusionGraphConv", "TemporalConvTCN",
    "multihead_attention", "History", "Windows", "fit", "make_windows", "step_lr",
    "ZINBParams", "zinb_log_prob", "zinb_logpmf", "zinb_mean", "zinb_nll", "zinb_pmf", "zinb_quantile",
]
