"""Meta-learned multi-fidelity algorithm selection."""

from .baseline_sh import ShConfig, sh_eval, sh_rank
from .eval_report import EvalReport, evaluate_model, export_fraction_curve, render_report
from .meta_data import MetaDataset, SyntheticSpec, generate_synthetic, load_csv, normalize_meta_features, split
from .model import ImfasParams, ModelConfig, init_model, model_backward, model_forward, predict_partial
from .softrank import SoftRankConfig, hard_rank, isotonic_l2, soft_rank, soft_rank_backward
from .ranking_loss import spearman_eval, spearman_loss, spearman_loss_backward
from .trainer import TrainConfig, run_seeds, train

__version__ = "0.1.0"
