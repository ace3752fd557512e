"""Training-time rank pruning of SVD-factorized convolutional networks."""

from .config import PRESETS, DataConfig, RunConfig, load_config
from .data import LabeledImageSet, gen_synthetic, load_cifar10
from .errors import ConfigError, DataFormatError, DimensionError, DprpError, InputError, NumericError, UsageError
from .layers import FactorizedParam, LayerSpec, Model, desk_architecture, resnet20_architecture
from .metrics import mac_count, model_account, scaled_accuracy, topk_accuracy
from .pruning import PruneEvent, compute_tau, prune_step, truncate
from .regularization import LossConfig, total_loss
from .svd import svd
from .tensor import GradTape, Tensor, backward, precision, set_precision
from .training import Plateau, SgdConfig, TrainState, fit

__version__ = "0.1.0"
