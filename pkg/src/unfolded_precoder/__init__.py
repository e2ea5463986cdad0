"""Power-efficient massive-MIMO ZF precoding by proximal gradient descent and its deep-unfolded variant."""

__version__ = "0.1.0"

from .core import SystemConfig, generate_channel, zf_precoder, simulate_received, db_to_linear
from .metrics import (MetricsReport, consumed_power, metrics_report, pcg, sinr_per_user,
                      sum_rate, tx_power)
from .pgd import (LipschitzBound, PgdParams, SolveTrace, grad_f, lagrangian, lipschitz_bound,
                  pgd_objective, pgd_step, prox_l21, solve_pgd)
from .oracle import kkt_residual, oracle_solve
from .unfolded import (ForwardTape, LayerParams, UnfoldedNetwork, backward, forward,
                       project_params)
from .training import (AdamState, TrainConfig, TrainHistory, adam_update, evaluate,
                       supervised_loss, train, unsupervised_loss)
from .dataio import ChannelDataset, read_dataset, write_dataset
