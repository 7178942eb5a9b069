import logging

from .__version__ import __title__, __version__  # noqa: F401

from .chat_api import ChatSession  # noqa: F401
from .config import RunConfig, load_config  # noqa: F401
from .inference import ModelEndpoint, parse_answer, predict_clip, run_batch  # noqa: F401
from .segmenter import SegmentationPolicy, partition  # noqa: F401

logging.getLogger(__name__).addHandler(logging.NullHandler())
