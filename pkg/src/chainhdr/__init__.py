"""Single-image HDR reconstruction with a chain of dilated-convolution networks.

A middle-exposure 8-bit image is mapped to EV +1, +2, +3 and EV -1, -2, -3
by six small networks applied in sequence; the resulting seven-image stack
is merged into a radiance map through a recovered camera response and then
tone mapped.
"""

from .data import ExposureStack, exposure_value, select_middle_exposure, extract_patches, split_dataset
from .network import ChainModel, SubnetworkParams, build_chain, build_subnetwork, subnetwork_forward
from .hdr import ResponseCurve, estimate_crf, merge_radiance, reinhard_tonemap
from .inference import InferredStack, generate_stack, infer_image, exposure_distance_profile
from .training import TrainConfig, train_chain, train_subnetwork
from .checkpoint import save_checkpoint, load_checkpoint
from .metrics import psnr, ssim, ms_ssim

__version__ = "0.1.0"
